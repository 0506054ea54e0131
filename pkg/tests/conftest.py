from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# filled by test_acceptance; printed once at the end of the session
ACCEPTANCE_LINES: dict[int, list[str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.setdefault(criterion, []).append(
        f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        for line in ACCEPTANCE_LINES[k]:
            terminalreporter.write_line(line)


@pytest.fixture
def configs_dir() -> Path:
    return CONFIGS

import csv
import math

import pytest
from scipy import stats

from mmwproxy.config import load_config
from mmwproxy.net import percentile
from mmwproxy.runner import (RunError, RunSummary, compare, load_summary, mean_ci95, merge,
                             relative_change, run_matrix, scenario_key)


@pytest.fixture(scope="module")
def short_cfg(request):
    from conftest import CONFIGS
    return load_config(CONFIGS / "scenario_b.yaml", ["duration=2.0"])


@pytest.fixture(scope="module")
def matrix_dir(short_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("matrix")
    run_matrix(short_cfg, out, seeds=[1, 2])
    return out


def test_single_cell(short_cfg):
    s = run_matrix(short_cfg, policies=["reactive"], seeds=[5])
    assert len(s.rows) == 1 and s.rows[0]["policy"] == "reactive" and s.rows[0]["seed"] == 5
    assert s.rows[0]["conservation"]


def test_matrix_layout(matrix_dir):
    names = sorted(p.name for p in matrix_dir.iterdir() if p.is_dir())
    assert names == sorted(f"{p}_seed{s}" for p in ("baseline", "reactive", "proactive")
                           for s in (1, 2))
    for f in ("summary.csv", "summary_by_policy.csv", "config.json"):
        assert (matrix_dir / f).is_file()
    for f in ("rtt.csv", "throughput.csv", "cwnd.csv", "channel.csv", "proxy_events.csv"):
        assert (matrix_dir / "reactive_seed1" / f).is_file()


def test_summary_matches_raw_samples(matrix_dir):
    s = load_summary(matrix_dir)
    for row in s.rows:
        d = matrix_dir / f"{row['policy']}_seed{row['seed']}"
        with (d / "rtt.csv").open() as f:
            rtts = [float(r["rtt_ms"]) for r in csv.DictReader(f)]
        assert len(rtts) == row["rtt_samples"]
        for name, p in (("p50_ms", 0.5), ("p99_ms", 0.99), ("p99999_ms", 0.99999)):
            assert row[name] == pytest.approx(percentile(rtts, p), abs=1e-5)


def test_rerun_is_byte_identical(short_cfg, matrix_dir, tmp_path):
    run_matrix(short_cfg, tmp_path, seeds=[1, 2])
    for f in ("summary.csv", "summary_by_policy.csv", "reactive_seed2/rtt.csv",
              "baseline_seed1/cwnd.csv"):
        assert (tmp_path / f).read_bytes() == (matrix_dir / f).read_bytes()


def test_mean_ci95_by_hand():
    x = [10.0, 12.0, 11.0, 13.0]
    m, h = mean_ci95(x)
    sd = math.sqrt(sum((v - 11.5) ** 2 for v in x) / 3)
    assert m == 11.5 and h == pytest.approx(stats.t.ppf(0.975, 3) * sd / 2)
    assert mean_ci95([4.0]) == (4.0, 0.0)
    assert all(math.isnan(v) for v in mean_ci95([]))


def test_relative_change_example():
    assert relative_change(68.08, 50.39) == pytest.approx(-25.98, abs=0.01)
    assert math.isnan(relative_change(0, 1))


def rows(policy_vals, key="k"):
    out = []
    for policy, vals in policy_vals.items():
        for seed, v in enumerate(vals, 1):
            out.append({"scenario": key, "policy": policy, "seed": seed, "p50_ms": v,
                        "p99_ms": 2 * v, "p99999_ms": 3 * v, "avg_mbps": 1000 - v,
                        "dropped_at_queue": 0, "dropped_by_channel": 0, "rto_count": 0})
    return RunSummary(key, out)


def test_compare_hand_check():
    s = rows({"baseline": [60.0, 80.0], "reactive": [40.0, 40.0], "proactive": [50.0, 50.0]})
    out = {(r["policy"], r["metric"]): r for r in compare(s)}
    assert len(out) == 8
    assert out[("reactive", "p50_ms")]["reduction_pct"] == pytest.approx(100 * (70 - 40) / 70)
    assert out[("proactive", "p99_ms")]["value"] == 100.0
    assert out[("reactive", "avg_mbps")]["change_pct"] == pytest.approx(100 * 30 / 930)


def test_self_compare_is_zero():
    s = rows({"baseline": [50.0], "reactive": [50.0]})
    assert all(r["change_pct"] == 0 for r in compare(s))


def test_compare_errors():
    with pytest.raises(RunError, match="two policies"):
        compare(rows({"baseline": [1.0, 2.0]}))
    with pytest.raises(RunError, match="mismatched"):
        merge([rows({"baseline": [1.0]}, "a"), rows({"reactive": [1.0]}, "b")])
    with pytest.raises(RunError, match="twice"):
        merge([rows({"baseline": [1.0]}), rows({"baseline": [1.0]})])


def test_compare_across_directories(short_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_matrix(short_cfg, a, policies=["baseline"], seeds=[1])
    run_matrix(short_cfg, b, policies=["reactive"], seeds=[1])
    out = compare([load_summary(a), load_summary(b)])
    assert {r["policy"] for r in out} == {"reactive"}


def test_scenario_key_ignores_seeds_and_policies(short_cfg):
    from conftest import CONFIGS
    other = load_config(CONFIGS / "scenario_b.yaml", ["duration=2.0", "seeds=[9]",
                                                      "policies=[reactive]"])
    changed = load_config(CONFIGS / "scenario_b.yaml", ["duration=3.0"])
    assert scenario_key(other) == scenario_key(short_cfg) != scenario_key(changed)


def test_load_summary_rejects_garbage(tmp_path):
    (tmp_path / "summary.csv").write_text("a,b\n1,2\n")
    with pytest.raises(RunError, match="not a run summary"):
        load_summary(tmp_path)
    with pytest.raises(RunError, match="cannot read"):
        load_summary(tmp_path / "missing")

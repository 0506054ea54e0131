"""Seeded experiment matrices: run every (policy, seed) cell, write
plot-ready CSVs per cell and a combined summary, and compare policies."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy import stats

from .config import ScenarioConfig
from .engine import NS_PER_S, seconds_to_ns
from .net import FlowMetrics, percentile
from .proxy import Policy
from .scenario import Scenario, build_trace, link_schedule

PERCENTILES = (("p50_ms", 0.50), ("p99_ms", 0.99), ("p99999_ms", 0.99999))

CELL_FIELDS = ("scenario", "policy", "seed", "p50_ms", "p99_ms", "p99999_ms", "avg_mbps",
               "packets_sent", "packets_delivered", "dropped_at_queue", "dropped_by_channel",
               "retransmissions", "rto_count", "fast_retransmits", "max_backlog",
               "rtt_samples", "conservation")

POLICY_FIELDS = ("scenario", "policy", "seeds", "p50_ms", "p99_ms", "p99999_ms", "avg_mbps",
                 "ci95_mbps", "ci95_low_mbps", "ci95_high_mbps", "dropped_at_queue",
                 "dropped_by_channel", "rto_count")

RTT_METRICS = ("p50_ms", "p99_ms", "p99999_ms")


class RunError(RuntimeError):
    """A matrix cell failed; the message names the cell."""


@dataclass
class CellResult:
    """Outcome of one (policy, seed) run."""

    scenario: str
    policy: str
    seed: int
    metrics: FlowMetrics

    def row(self) -> dict:
        m = self.metrics
        row = {"scenario": self.scenario, "policy": self.policy, "seed": self.seed}
        for name, p in PERCENTILES:
            row[name] = percentile(m.rtt_values, p) / 1e6 if m.rtt_values else math.nan
        row.update(avg_mbps=m.avg_throughput_mbps(), packets_sent=m.packets_sent,
                   packets_delivered=m.packets_delivered, dropped_at_queue=m.dropped_at_queue,
                   dropped_by_channel=m.dropped_by_channel, retransmissions=m.retransmissions,
                   rto_count=m.rto_count, fast_retransmits=m.fast_retransmits,
                   max_backlog=m.max_backlog, rtt_samples=len(m.rtt_values),
                   conservation=m.conservation_holds())
        return row


@dataclass
class RunSummary:
    """Per-cell rows plus per-policy aggregates across seeds."""

    scenario: str
    rows: list = field(default_factory=list)

    @property
    def policies(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r["policy"] not in seen:
                seen.append(r["policy"])
        return seen

    def cells(self, policy: str) -> list[dict]:
        return [r for r in self.rows if r["policy"] == policy]

    def by_policy(self) -> list[dict]:
        return [aggregate(self.scenario, p, self.cells(p)) for p in self.policies]

    def policy_row(self, policy: str) -> dict:
        rows = self.cells(policy)
        if not rows:
            raise KeyError(f"policy {policy!r} not in summary")
        return aggregate(self.scenario, policy, rows)


def mean_ci95(values: Sequence[float]) -> tuple[float, float]:
    """Mean and Student-t 95% half-width over seed means (half-width 0 for one seed)."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    mean = float(x.mean())
    if x.size < 2:
        return mean, 0.0
    sem = float(x.std(ddof=1)) / math.sqrt(x.size)
    return mean, float(stats.t.ppf(0.975, x.size - 1)) * sem


def aggregate(scenario: str, policy: str, rows: Sequence[dict]) -> dict:
    out = {"scenario": scenario, "policy": policy, "seeds": len(rows)}
    for name in RTT_METRICS:
        out[name] = float(np.mean([float(r[name]) for r in rows]))
    mean, half = mean_ci95([float(r["avg_mbps"]) for r in rows])
    out.update(avg_mbps=mean, ci95_mbps=half, ci95_low_mbps=mean - half,
               ci95_high_mbps=mean + half)
    for name in ("dropped_at_queue", "dropped_by_channel", "rto_count"):
        out[name] = sum(int(r[name]) for r in rows)
    return out


def scenario_key(cfg: ScenarioConfig) -> str:
    """Name plus a digest of everything except the policy and seed lists."""
    flat = cfg.to_flat()
    flat.pop("policies", None)
    flat.pop("seeds", None)
    blob = json.dumps(flat, sort_keys=True, default=str).encode()
    return f"{cfg.name}-{hashlib.sha1(blob).hexdigest()[:10]}"


# -- running ------------------------------------------------------------------------

def run_cell(cfg: ScenarioConfig, policy, seed: int, trace=None, links=None,
             log_events: bool = False) -> tuple[CellResult, Scenario]:
    policy = Policy.parse(policy)
    sc = Scenario.from_config(cfg, policy, seed, trace=trace, links=links, log_events=log_events)
    sc.run_until(seconds_to_ns(cfg.duration))
    return CellResult(scenario_key(cfg), policy.value, int(seed), sc.metrics), sc


def iter_seed_cells(cfg: ScenarioConfig, seed: int, policies: Sequence[str],
                    log_events: bool = False) -> Iterator[tuple[CellResult, Scenario]]:
    """Run each policy for one seed; the trace and link schedule are computed once."""
    try:
        trace = build_trace(cfg, seed)
        links = link_schedule(trace, cfg.link.build(Path(cfg.base_dir)),
                              seconds_to_ns(cfg.trace.update_interval),
                              seconds_to_ns(cfg.duration), cfg.trace.interpolation)
    except Exception as exc:
        raise RunError(f"seed={seed}: building the channel failed: {exc}") from exc
    for policy in policies:
        try:
            yield run_cell(cfg, policy, seed, trace=trace, links=links, log_events=log_events)
        except Exception as exc:
            raise RunError(f"cell policy={policy} seed={seed} failed: "
                           f"{type(exc).__name__}: {exc}") from exc


def _run_seed(cfg: ScenarioConfig, seed: int, policies: Sequence[str], out_dir: Optional[str],
              log_events: bool) -> list[dict]:
    rows = []
    for res, sc in iter_seed_cells(cfg, seed, policies, log_events):
        row = res.row()
        if out_dir is not None:
            write_cell(Path(out_dir) / cell_dir_name(res.policy, seed), res, row,
                       sc.sim.event_log)
        rows.append(row)
    return rows


def run_matrix(cfg: ScenarioConfig, out_dir=None, policies: Optional[Iterable] = None,
               seeds: Optional[Iterable[int]] = None, log_events: bool = False,
               jobs: int = 1) -> RunSummary:
    """Run every (policy, seed) cell; optionally write per-cell CSVs under ``out_dir``."""
    policies = [Policy.parse(p).value for p in (policies or cfg.policies)]
    seeds = [int(s) for s in (seeds if seeds is not None else cfg.seeds)]
    if not policies or not seeds:
        raise RunError("empty matrix: need at least one policy and one seed")
    out = str(out_dir) if out_dir is not None else None
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_seed, cfg, s, policies, out, log_events) for s in seeds]
            per_seed = [f.result() for f in futures]
    else:
        per_seed = [_run_seed(cfg, s, policies, out, log_events) for s in seeds]
    # rows ordered by policy then seed, independent of execution order
    rows = [per_seed[j][i] for i in range(len(policies)) for j in range(len(seeds))]
    summary = RunSummary(scenario_key(cfg), rows)
    if out is not None:
        write_summary(Path(out), summary, cfg)
    return summary


# -- output -----------------------------------------------------------------------

def cell_dir_name(policy: str, seed: int) -> str:
    return f"{Policy.parse(policy).value}_seed{int(seed)}"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def _ns_s(t: int) -> str:
    return f"{t / NS_PER_S:.9f}"


def write_cell(d: Path, res: CellResult, row: dict, event_log=None) -> None:
    d.mkdir(parents=True, exist_ok=True)
    m = res.metrics
    _write_csv(d / "rtt.csv", ("time_s", "rtt_ms"),
               ((_ns_s(t), f"{v / 1e6:.6f}") for t, v in zip(m.rtt_times, m.rtt_values)))
    _write_csv(d / "throughput.csv", ("time_s", "throughput_mbps"),
               ((_ns_s(t), v) for t, v in m.throughput_series()))
    _write_csv(d / "cwnd.csv", ("time_s", "cwnd_bytes", "ssthresh_bytes"),
               ((_ns_s(t), c, "inf" if math.isinf(s) else int(s)) for t, c, s in m.cwnd_series))
    _write_csv(d / "channel.csv", ("time_s", "mcs", "rate_mbps"),
               ((_ns_s(t), mcs, r / 1e6) for t, mcs, r in m.channel_series))
    _write_csv(d / "proxy_events.csv", ("time_s", "event", "mcs", "cwnd_bytes"),
               ((_ns_s(t), e, mcs, c) for t, e, mcs, c in m.proxy_events))
    _write_csv(d / "summary.csv", CELL_FIELDS, [[row[k] for k in CELL_FIELDS]])
    if event_log is not None:
        (d / "events.log").write_text("\n".join(event_log) + "\n")


def write_summary(out: Path, summary: RunSummary, cfg: Optional[ScenarioConfig] = None) -> None:
    _write_csv(out / "summary.csv", CELL_FIELDS, [[r[k] for k in CELL_FIELDS] for r in summary.rows])
    _write_csv(out / "summary_by_policy.csv", POLICY_FIELDS,
               [[r[k] for k in POLICY_FIELDS] for r in summary.by_policy()])
    if cfg is not None:
        (out / "config.json").write_text(json.dumps(cfg.to_flat(), sort_keys=True, indent=1,
                                                    default=str) + "\n")


_INT_FIELDS = {"seed", "packets_sent", "packets_delivered", "dropped_at_queue",
               "dropped_by_channel", "retransmissions", "rto_count", "fast_retransmits",
               "max_backlog", "rtt_samples"}


def _parse_cell(r: dict) -> dict:
    out = {}
    for k in CELL_FIELDS:
        v = r[k]
        if k in _INT_FIELDS:
            out[k] = int(v)
        elif k == "conservation":
            out[k] = v == "true"
        elif k in ("scenario", "policy"):
            out[k] = v
        else:
            out[k] = float(v)
    return out


def load_summary(path) -> RunSummary:
    """Read ``summary.csv`` from a matrix directory (or the file itself)."""
    p = Path(path)
    if p.is_dir():
        p = p / "summary.csv"
    try:
        with p.open(newline="") as f:
            reader = csv.DictReader(f)
            missing = set(CELL_FIELDS) - set(reader.fieldnames or ())
            if missing:
                raise RunError(f"{p}: not a run summary (missing {', '.join(sorted(missing))})")
            rows = [_parse_cell(r) for r in reader]
    except OSError as exc:
        raise RunError(f"cannot read summary {p}: {exc}") from None
    except (KeyError, ValueError) as exc:
        raise RunError(f"{p}: malformed summary: {exc}") from None
    if not rows:
        raise RunError(f"{p}: summary has no rows")
    keys = {r["scenario"] for r in rows}
    if len(keys) != 1:
        raise RunError(f"{p}: rows from several scenarios: {sorted(keys)}")
    return RunSummary(keys.pop(), rows)


# -- comparison ---------------------------------------------------------------------

def merge(summaries: Sequence[RunSummary]) -> RunSummary:
    if not summaries:
        raise RunError("nothing to compare")
    keys = {s.scenario for s in summaries}
    if len(keys) != 1:
        raise RunError(f"mismatched scenario keys: {', '.join(sorted(keys))}")
    rows, seen = [], set()
    for s in summaries:
        for r in s.rows:
            cell = (r["policy"], r["seed"])
            if cell in seen:
                raise RunError(f"cell policy={cell[0]} seed={cell[1]} appears twice")
            seen.add(cell)
            rows.append(r)
    return RunSummary(summaries[0].scenario, rows)


def relative_change(reference: float, value: float) -> float:
    """Percent change of ``value`` against ``reference``."""
    if reference == 0:
        return math.nan
    return (value - reference) / reference * 100.0


def compare(summaries, reference: str = "baseline") -> list[dict]:
    """Per-metric deltas of every policy against ``reference``.

    ``reduction_pct`` is positive when the policy lowers the metric, which is
    what matters for RTT; for throughput read ``change_pct``.
    """
    merged = merge(list(summaries) if not isinstance(summaries, RunSummary) else [summaries])
    policies = merged.policies
    if len(policies) < 2:
        raise RunError(f"comparison needs at least two policies, got {policies}")
    ref = reference if reference in policies else policies[0]
    agg = {p: merged.policy_row(p) for p in policies}
    out = []
    for p in policies:
        if p == ref:
            continue
        for metric in RTT_METRICS + ("avg_mbps",):
            a, b = agg[ref][metric], agg[p][metric]
            ch = relative_change(a, b)
            out.append({"scenario": merged.scenario, "metric": metric, "reference": ref,
                        "policy": p, "reference_value": a, "value": b,
                        "change_pct": ch, "reduction_pct": -ch if not math.isnan(ch) else ch})
    return out


COMPARE_FIELDS = ("scenario", "metric", "reference", "policy", "reference_value", "value",
                  "change_pct", "reduction_pct")


def format_table(rows: Sequence[dict], fields: Sequence[str]) -> str:
    """Plain fixed-width text table."""
    cells = [[_fmt(r[f]) if not isinstance(r[f], float) else f"{r[f]:.3f}" for f in fields]
             for r in rows]
    widths = [max(len(f), *(len(c[i]) for c in cells)) if cells else len(f)
              for i, f in enumerate(fields)]
    lines = ["  ".join(f.ljust(w) for f, w in zip(fields, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def write_comparison(path: Path, rows: Sequence[dict]) -> None:
    _write_csv(path, COMPARE_FIELDS, [[r[k] for k in COMPARE_FIELDS] for r in rows])

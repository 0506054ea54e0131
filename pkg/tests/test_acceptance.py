"""Acceptance criteria 1-7.  Each test records one PASS/FAIL line that the
session prints under "acceptance criteria"."""

import filecmp
import random
import time

import numpy as np
import pytest

from conftest import CONFIGS, record
from helpers import LINK, TABLE, mcs_trace

from mmwproxy.config import load_config
from mmwproxy.engine import NS_PER_S, seconds_to_ns
from mmwproxy.phy import (DEFAULT_NOISE_POWER_DBM, bler_from_mmib, mer_from_snr, noise_power,
                          offered_rate, select_mcs)
from mmwproxy.proxy import Policy, ProxyConfig, bdp_bytes, reactive_on_report, ApReport
from mmwproxy.runner import RunSummary, iter_seed_cells, run_matrix
from mmwproxy.scenario import Scenario
from mmwproxy.transport import TcpSender, TransportConfig, cubic_window, new_loss_epoch
from mmwproxy.net import FlowMetrics
from mmwproxy.engine import Simulator

MSS = 8140


# -- 1 ------------------------------------------------------------------------------

def test_criterion_1_formula_fidelity():
    t0 = time.perf_counter()
    n = noise_power(5e8, 290.0)
    default = LINK.noise_power_dbm
    half = [bler_from_mmib(e.x1, e.x1, e.x2) for e in TABLE] + [bler_from_mmib(0.3, 0.3, 0.01)]
    snrs = [-20.0, -3.25, 0.0, 6.5, 12.125, 33.0]
    mer_ok = all(mer_from_snr(s, 6.5) == s - 6.5 for s in snrs)
    elapsed = time.perf_counter() - t0
    ok = (abs(n - (-86.99)) <= 0.05 and default == DEFAULT_NOISE_POWER_DBM == -87.01
          and all(h == 0.5 for h in half) and mer_ok and elapsed < 1.0)
    record(1, ok, f"noise={n:.3f} dBm, default={default} dBm, BLER(X1)=0.5 on "
                  f"{len(half)} curves, MER=SNR-6.5 exact, {elapsed * 1e3:.1f} ms")
    assert ok


# -- 2 ------------------------------------------------------------------------------

def brute_force_mcs(mer_db, table, target):
    best = None
    for e in table:
        if e.bler(mer_db) <= target and (best is None or e.index > best.index):
            best = e
    return best


def test_criterion_2_amc_oracle():
    t0 = time.perf_counter()
    grid = np.round(np.arange(-10.0, 40.0 + 1e-9, 0.05), 10)
    picked = [select_mcs(float(m), LINK) for m in grid]
    oracle = [brute_force_mcs(float(m), TABLE, LINK.bler_target) for m in grid]
    idx = [p.index if p else 0 for p in picked]
    mismatches = sum(p != o for p, o in zip(picked, oracle))
    monotone = all(b >= a for a, b in zip(idx, idx[1:]))
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and monotone and len(grid) == 1001 and elapsed < 5.0
    record(2, ok, f"{len(grid)} MER points, {mismatches} mismatches vs brute force, "
                  f"monotone={monotone}, {elapsed:.2f} s")
    assert ok


# -- 3 ------------------------------------------------------------------------------

REACTIVE_LEVELS = [12, 10, 7, 11, 6, 12, 8, 3, 9, 12, 2, 10, 7, 12, 11, 1, 12, 9, 6, 12,
                   10, 8, 12, 7, 11, 12]


def _t_min_at(metrics, t, prior):
    vals = [v for ts, v in zip(metrics.rtt_times, metrics.rtt_values) if ts <= t]
    return min(vals) if vals else prior


def test_criterion_3_reactive_tracking():
    step = 0.5
    schedule = [(k * step, m) for k, m in enumerate(REACTIVE_LEVELS)]
    duration = step * len(REACTIVE_LEVELS)
    trace = mcs_trace(schedule, duration)
    pcfg = ProxyConfig()
    sc = Scenario(Policy.REACTIVE, trace, LINK, proxy=pcfg, queue_capacity_packets=4000)
    m = sc.run_until(seconds_to_ns(duration))
    lat = seconds_to_ns(pcfg.report_latency)
    prior = 2 * seconds_to_ns(0.020)
    hist = sc.proxy.history
    transitions, good = 0, 0
    worst = 0.0
    for (t_s, mcs), (_, prev) in zip(schedule[1:], schedule[:-1]):
        if mcs == prev:
            continue
        transitions += 1
        tc = seconds_to_ns(t_s)
        rate = offered_rate(TABLE.by_index(mcs), LINK.bandwidth_hz)
        cmds = [(t, c) for t, c in hist if tc <= t <= tc + lat]
        if not cmds:
            continue
        t_cmd, c = cmds[-1]
        expect = rate * _t_min_at(m, t_cmd, prior) / 8e9
        worst = max(worst, abs(c - expect) / MSS)
        good += abs(c - expect) <= MSS
    # the 1.5 Gbps plateau with t_min = 40 ms
    plateau = reactive_on_report(ApReport(0, 12, 1_500_000_000), seconds_to_ns(0.040), MSS)
    top = max(c for _, c in hist) / MSS
    ok = (transitions >= 20 and good == transitions and plateau == 7_500_000
          and 920 <= top <= 960)
    record(3, ok, f"{good}/{transitions} transitions commanded R*t_min within "
                  f"{pcfg.report_latency * 1e3:g} ms (worst {worst:.3f} MSS); "
                  f"1.5 Gbps x 40 ms = {plateau} B = {plateau / MSS:.1f} MSS; "
                  f"simulated plateau {top:.1f} MSS")
    assert ok


# -- 4 ------------------------------------------------------------------------------

def test_criterion_4_proactive_state_machine():
    t_drop, t_back, duration = 2.0, 2.3, 5.0
    trace = mcs_trace([(0.0, 10), (t_drop, 7), (t_back, 10)], duration)
    pcfg = ProxyConfig(policy=Policy.PROACTIVE)
    sc = Scenario(Policy.PROACTIVE, trace, LINK, proxy=pcfg, queue_capacity_packets=4000)
    sc.run_until(seconds_to_ns(duration))
    ev = sc.proxy.events
    lat = seconds_to_ns(pcfg.report_latency)
    tick = seconds_to_ns(0.01)
    drop_ns = seconds_to_ns(t_drop)
    enter = [t for t, e, _, _ in ev if e == "enter_conservative"]
    ramp = [t for t, e, _, _ in ev if e == "enter_ramping"]
    normal = [t for t, e, _, _ in ev if e == "enter_normal"]
    t_min = sc.proxy.t_min
    min_bdp = max(bdp_bytes(offered_rate(TABLE.lowest, LINK.bandwidth_hz), t_min), MSS)
    hist = sc.proxy.history
    entered_ok = bool(enter) and enter[0] == drop_ns + lat
    cons_span = (ramp[0] - enter[0]) if enter and ramp else -1
    span_ok = abs(cons_span - seconds_to_ns(pcfg.ttr)) <= tick
    in_cons = [c for t, c in hist if enter and ramp and enter[0] <= t < ramp[0]]
    pinned = bool(in_cons) and all(c == min_bdp for c in in_cons)
    ramp_cmds = [c for t, c in hist if ramp and t >= ramp[0]]
    monotone = all(b >= a for a, b in zip(ramp_cmds, ramp_cmds[1:]))
    target = bdp_bytes(offered_rate(TABLE.by_index(10), LINK.bandwidth_hz), t_min)
    reached = bool(normal) and bool(ramp_cmds) and abs(ramp_cmds[-1] - target) <= MSS
    ok = entered_ok and span_ok and pinned and monotone and reached and len(enter) == 1
    record(4, ok, f"Conservative at +{(enter[0] - drop_ns) / 1e6 if enter else float('nan'):.1f} ms "
                  f"after the 10->7 drop, held {cons_span / 1e9:.3f} s at "
                  f"{min_bdp / MSS:.2f} MSS despite recovery at +0.3 s; ramp of "
                  f"{len(ramp_cmds)} steps monotone={monotone}, final "
                  f"{ramp_cmds[-1] / MSS if ramp_cmds else 0:.1f} vs target {target / MSS:.1f} MSS")
    assert ok


# -- 5 ------------------------------------------------------------------------------

def _window_max_ms(metrics, windows):
    times = np.asarray(metrics.rtt_times)
    vals = np.asarray(metrics.rtt_values)
    out = []
    for a, b in windows:
        sel = vals[(times >= a) & (times <= b)]
        out.append(float(sel.max()) / 1e6 if sel.size else 0.0)
    return out


@pytest.fixture(scope="module")
def scenario_b():
    """Runs the 3 x 10 x 30 s matrix once, keeping only summaries and window maxima."""
    cfg = load_config(CONFIGS / "scenario_b.yaml")
    spec = cfg.synthetic_spec()
    windows = [(seconds_to_ns(e.start_time), seconds_to_ns(e.start_time + e.duration + 0.5))
               for e in spec.blockage_events]
    t0 = time.perf_counter()
    rows, blk, conserved = [], {}, True
    for seed in cfg.seeds:
        for res, _ in iter_seed_cells(cfg, seed, cfg.policies):
            rows.append(res.row())
            blk[(res.policy, seed)] = _window_max_ms(res.metrics, windows)
            conserved &= res.metrics.conservation_holds()
    elapsed = time.perf_counter() - t0
    rows.sort(key=lambda r: (cfg.policies.index(r["policy"]), r["seed"]))
    return {"cfg": cfg, "summary": RunSummary("scenario-b", rows), "blk": blk,
            "elapsed": elapsed, "conserved": conserved}


def test_criterion_5_scenario_b_trends(scenario_b):
    s = scenario_b["summary"]
    agg = {p: s.policy_row(p) for p in s.policies}
    base, rea, pro = agg["baseline"], agg["reactive"], agg["proactive"]
    red_r = 1 - rea["p50_ms"] / base["p50_ms"]
    red_p = 1 - pro["p50_ms"] / base["p50_ms"]
    a = red_r >= 0.25 and red_p >= 0.25
    b = pro["p99999_ms"] <= rea["p99999_ms"] <= base["p99999_ms"]
    c = rea["avg_mbps"] > pro["avg_mbps"] > base["avg_mbps"]
    seeds = scenario_b["cfg"].seeds
    blk = scenario_b["blk"]
    rea_max = max(max(blk[("reactive", k)]) for k in seeds)
    base_peak = [max(blk[("baseline", k)]) for k in seeds]
    d = rea_max <= 70.0 and all(v > 150.0 for v in base_peak)
    fast = scenario_b["elapsed"] < 300
    ok = a and b and c and d and fast
    record(5, ok,
           f"(a) p50 {base['p50_ms']:.1f} -> {rea['p50_ms']:.1f}/{pro['p50_ms']:.1f} ms "
           f"(-{red_r:.0%}/-{red_p:.0%}) {'ok' if a else 'FAIL'}; "
           f"(b) p99.999 pro {pro['p99999_ms']:.1f} <= rea {rea['p99999_ms']:.1f} <= base "
           f"{base['p99999_ms']:.1f} {'ok' if b else 'FAIL'}; "
           f"(c) Mbps rea {rea['avg_mbps']:.0f} > pro {pro['avg_mbps']:.0f} > base "
           f"{base['avg_mbps']:.0f} (+-{base['ci95_mbps']:.0f}) {'ok' if c else 'FAIL'}; "
           f"(d) blockage max RTT reactive {rea_max:.1f} ms, baseline min-over-seeds "
           f"{min(base_peak):.1f} ms {'ok' if d else 'FAIL'}; "
           f"{len(s.rows)} runs in {scenario_b['elapsed']:.0f} s")
    assert ok


# -- 6 ------------------------------------------------------------------------------

def test_criterion_6_cubic(scenario_b):
    rng = random.Random(6)
    worst = 0.0
    for _ in range(100):
        w_max = rng.uniform(2, 5000) * MSS
        st = new_loss_epoch(w_max, 0, mss_bytes=MSS)
        at_start = cubic_window(st, 0)
        at_k = cubic_window(st, st.k_seconds * NS_PER_S)
        worst = max(worst, abs(at_start - 0.7 * w_max) / w_max, abs(at_k - w_max) / w_max)
    sim = Simulator()
    snd = TcpSender(sim, TransportConfig(), lambda p: None, FlowMetrics())
    snd.start()
    snd.cwnd = 100.0 * MSS
    snd.on_rto()
    halved = snd.ssthresh == 50.0 * MSS and snd.cwnd == MSS
    rto = [r["rto_count"] for r in scenario_b["summary"].cells("baseline")]
    ok = worst < 1e-9 and halved and min(rto) >= 1
    record(6, ok, f"W(epoch)=beta*w_max and W(K)=w_max over 100 draws (max rel err {worst:.1e}); "
                  f"RTO 100 MSS -> ssthresh {snd.ssthresh / MSS:g} MSS; baseline RTOs per seed "
                  f"{min(rto)}..{max(rto)}")
    assert ok


# -- 7 ------------------------------------------------------------------------------

def test_criterion_7_determinism_and_conservation(scenario_b, tmp_path):
    cfg = load_config(CONFIGS / "scenario_b.yaml", ["duration=14.5", "seeds=[3]"])
    a, b = tmp_path / "a", tmp_path / "b"
    run_matrix(cfg, out_dir=a, log_events=True)
    run_matrix(cfg, out_dir=b, log_events=True)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    same = all(filecmp.cmp(a / f, b / f, shallow=False) for f in files)
    same &= sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file()) == files
    conserved = scenario_b["conserved"] and all(r["conservation"]
                                                for r in scenario_b["summary"].rows)
    ok = same and conserved and len(files) > 0
    record(7, ok, f"{len(files)} output files byte-identical across two runs "
                  f"(event logs included): {same}; conservation in all "
                  f"{len(scenario_b['summary'].rows)} matrix runs: {conserved}")
    assert ok

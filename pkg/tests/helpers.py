"""Trace builders shared by the tests."""

import numpy as np

from mmwproxy.channel import BeamGrid, ChannelTrace
from mmwproxy.engine import NS_PER_S
from mmwproxy.phy import LinkAbstractionConfig, load_mcs_table, mer_threshold

TABLE = load_mcs_table()
LINK = LinkAbstractionConfig()
# P_rx = MER + noise + delta
MER_TO_PRX = LINK.noise_power_dbm + LINK.delta_db


def thresholds(target: float = 1e-2) -> dict[int, float]:
    return {e.index: mer_threshold(e, target) for e in TABLE}


def p_rx_for_mcs(index: int) -> float:
    """A received power whose MER sits well inside the band where ``index`` is chosen."""
    thr = thresholds()
    above = sorted(v for v in thr.values() if v > thr[index] + 1e-9)
    mer = thr[index] + (0.5 * (above[0] - thr[index]) if above else 3.0)
    return mer + MER_TO_PRX


def piecewise_trace(levels, duration_s: float, period_s: float = 0.01) -> ChannelTrace:
    """Single-beam trace holding each ``(start_s, p_rx_dbm)`` level until the next start."""
    n = int(round(duration_s / period_s)) + 1
    times = [int(round(k * period_s * NS_PER_S)) for k in range(n)]
    starts = [int(round(s * NS_PER_S)) for s, _ in levels]
    grids = []
    for t in times:
        k = max(i for i, s in enumerate(starts) if s <= t)
        grids.append(BeamGrid((0.0,), (0.0,), np.array([[levels[k][1]]])))
    return ChannelTrace(tuple(times), tuple(grids))


def mcs_trace(schedule, duration_s: float) -> ChannelTrace:
    """Piecewise-constant trace from ``(start_s, mcs_index)`` pairs (0 = outage)."""
    return piecewise_trace([(t, p_rx_for_mcs(m) if m else -np.inf) for t, m in schedule],
                           duration_s)

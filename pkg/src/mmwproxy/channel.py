"""Beam-pair power matrices over time: loading, interpolation, beam choice,
and synthetic blockage traces."""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

NS_PER_S = 1_000_000_000

DEFAULT_ANGLES_DEG = tuple(range(-30, 31, 10))
TRACE_COLUMNS = ("time_s", "tx_angle_deg", "rx_angle_deg", "p_rx_dbm")
OUTAGE = -math.inf
MAX_ATTENUATION_DB = 60.0


class TraceError(ValueError):
    """Malformed trace or scenario file."""


def _strictly_increasing(xs: Sequence[float]) -> bool:
    return all(b > a for a, b in zip(xs, xs[1:]))


@dataclass(frozen=True, eq=False)
class BeamGrid:
    """Received CW power (dBm) indexed by (tx direction, rx direction).

    Cells equal to ``-inf`` mark an outage (no measurable signal).
    """

    tx_angles_deg: tuple[float, ...]
    rx_angles_deg: tuple[float, ...]
    values_dbm: np.ndarray

    def __post_init__(self):
        values = np.array(self.values_dbm, dtype=float)
        values[np.isnan(values)] = OUTAGE
        values.setflags(write=False)
        object.__setattr__(self, "values_dbm", values)
        object.__setattr__(self, "tx_angles_deg", tuple(float(a) for a in self.tx_angles_deg))
        object.__setattr__(self, "rx_angles_deg", tuple(float(a) for a in self.rx_angles_deg))
        if values.shape != (len(self.tx_angles_deg), len(self.rx_angles_deg)):
            raise TraceError(
                f"grid shape {values.shape} does not match "
                f"{len(self.tx_angles_deg)} tx x {len(self.rx_angles_deg)} rx angles")
        if not (_strictly_increasing(self.tx_angles_deg) and _strictly_increasing(self.rx_angles_deg)):
            raise TraceError("beam angles must be strictly increasing")
        if np.any(values == math.inf):
            raise TraceError("grid contains +inf power")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values_dbm.shape

    def same_axes(self, other: "BeamGrid") -> bool:
        return (self.tx_angles_deg == other.tx_angles_deg
                and self.rx_angles_deg == other.rx_angles_deg)

    def with_values(self, values) -> "BeamGrid":
        return BeamGrid(self.tx_angles_deg, self.rx_angles_deg, values)

    def __eq__(self, other):
        if not isinstance(other, BeamGrid):
            return NotImplemented
        return self.same_axes(other) and np.array_equal(self.values_dbm, other.values_dbm)

    def index_of(self, tx_deg: float, rx_deg: float) -> tuple[int, int]:
        try:
            return self.tx_angles_deg.index(float(tx_deg)), self.rx_angles_deg.index(float(rx_deg))
        except ValueError:
            raise KeyError((tx_deg, rx_deg)) from None


@dataclass(frozen=True)
class ChannelTrace:
    """Time-ordered snapshots; timestamps are integer nanoseconds."""

    times_ns: tuple[int, ...]
    grids: tuple[BeamGrid, ...]

    def __post_init__(self):
        object.__setattr__(self, "times_ns", tuple(int(t) for t in self.times_ns))
        object.__setattr__(self, "grids", tuple(self.grids))
        if len(self.times_ns) != len(self.grids):
            raise TraceError("times and grids differ in length")
        if not self.grids:
            raise TraceError("trace has no snapshots")
        for a, b in zip(self.times_ns, self.times_ns[1:]):
            if b <= a:
                raise TraceError(f"timestamps not strictly increasing at {b / NS_PER_S:g} s")
        first = self.grids[0]
        for g in self.grids[1:]:
            if not g.same_axes(first):
                raise TraceError("all snapshots must share one beam grid shape")

    def __len__(self):
        return len(self.grids)

    @property
    def duration_ns(self) -> int:
        return self.times_ns[-1] - self.times_ns[0]


def _parse_power(text: str) -> float:
    t = text.strip().lower()
    if t in ("outage", "-inf", "nan", ""):
        return OUTAGE
    return float(t)


def _format_power(v: float) -> str:
    return "outage" if v == OUTAGE else repr(float(v))


def load_trace(path) -> ChannelTrace:
    """Parse a trace CSV (one row per cell per snapshot).

    Errors carry the offending line number.
    """
    path = Path(path)
    snapshots: dict[float, dict[tuple[float, float], float]] = {}
    order: list[float] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRACE_COLUMNS:
            raise TraceError(f"{path}:1: header must be {','.join(TRACE_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise TraceError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                t = float(row[0])
                tx, rx = float(row[1]), float(row[2])
                p = _parse_power(row[3])
            except ValueError as exc:
                raise TraceError(f"{path}:{lineno}: {exc}") from None
            if not order or t != order[-1]:
                if t in snapshots:
                    raise TraceError(f"{path}:{lineno}: duplicate timestamp {t:g} s")
                if order and t < order[-1]:
                    raise TraceError(f"{path}:{lineno}: timestamp {t:g} s is not monotone")
                snapshots[t] = {}
                order.append(t)
            cells = snapshots[t]
            if (tx, rx) in cells:
                raise TraceError(
                    f"{path}:{lineno}: duplicate timestamp {t:g} s for cell ({tx:g}, {rx:g})")
            cells[(tx, rx)] = p
    if not order:
        raise TraceError(f"{path}: no snapshots")

    first = snapshots[order[0]]
    tx_angles = sorted({k[0] for k in first})
    rx_angles = sorted({k[1] for k in first})
    keys = {(a, b) for a in tx_angles for b in rx_angles}
    grids = []
    for t in order:
        cells = snapshots[t]
        if set(cells) != keys:
            raise TraceError(f"{path}: snapshot at {t:g} s is not a complete "
                             f"{len(tx_angles)}x{len(rx_angles)} grid")
        values = [[cells[(a, b)] for b in rx_angles] for a in tx_angles]
        grids.append(BeamGrid(tuple(tx_angles), tuple(rx_angles), np.array(values)))
    times = [int(round(t * NS_PER_S)) for t in order]
    try:
        return ChannelTrace(tuple(times), tuple(grids))
    except TraceError as exc:
        raise TraceError(f"{path}: {exc}") from None


def save_trace(trace: ChannelTrace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for t, g in zip(trace.times_ns, trace.grids):
            ts = repr(t / NS_PER_S)
            for i, a in enumerate(g.tx_angles_deg):
                for j, b in enumerate(g.rx_angles_deg):
                    w.writerow((ts, repr(a), repr(b), _format_power(g.values_dbm[i, j])))


def sample_grid(trace: ChannelTrace, t: int, interpolation: str = "db") -> BeamGrid:
    """Grid at time ``t`` (ns), linear between snapshots, clamped at the ends.

    ``interpolation`` is ``"db"`` (linear in dB) or ``"mw"`` (linear in mW).
    """
    times = trace.times_ns
    k = bisect.bisect_right(times, t)
    if k == 0:
        return trace.grids[0]
    if k == len(times):
        return trace.grids[-1]
    t0, t1 = times[k - 1], times[k]
    g0, g1 = trace.grids[k - 1], trace.grids[k]
    if t == t0:
        return g0
    w = (t - t0) / (t1 - t0)
    a, b = g0.values_dbm, g1.values_dbm
    with np.errstate(invalid="ignore", divide="ignore"):
        if interpolation == "db":
            # an outage endpoint stays outage until the other knot is reached
            values = np.where(np.isinf(a) | np.isinf(b), np.where(w < 1, np.minimum(a, b), b),
                              a + w * (b - a))
        elif interpolation == "mw":
            mw = (1 - w) * 10 ** (a / 10) + w * 10 ** (b / 10)
            values = np.where(mw > 0, 10 * np.log10(mw), OUTAGE)
        else:
            raise ValueError(f"unknown interpolation {interpolation!r}")
    return g0.with_values(values)


def select_best_beam(grid: BeamGrid) -> Optional[tuple[float, float, float]]:
    """Strongest (tx_angle, rx_angle, p_rx_dbm); lowest (tx, rx) index wins ties.

    Returns ``None`` when every cell is an outage.
    """
    v = grid.values_dbm
    flat = int(np.argmax(v))  # first maximum in row-major order
    i, j = divmod(flat, v.shape[1])
    p = float(v[i, j])
    if p == OUTAGE:
        return None
    return grid.tx_angles_deg[i], grid.rx_angles_deg[j], p


# --- synthetic traces -------------------------------------------------------

@dataclass(frozen=True)
class RampShape:
    """Trapezoid edges: attenuation rises over ``rise_s`` and falls over ``fall_s``."""

    rise_s: float = 0.5
    fall_s: float = 0.5


@dataclass(frozen=True)
class BlockageEvent:
    start_time: float
    duration: float
    affected: tuple[tuple[float, float], ...]
    peak_attenuation_db: float
    ramp_shape: RampShape = RampShape()

    def __post_init__(self):
        if self.duration <= 0:
            raise TraceError("blockage duration must be positive")
        if not 0 <= self.peak_attenuation_db <= MAX_ATTENUATION_DB:
            raise TraceError(f"peak attenuation must lie in [0, {MAX_ATTENUATION_DB:g}] dB")
        if self.ramp_shape.rise_s < 0 or self.ramp_shape.fall_s < 0:
            raise TraceError("ramp durations must be nonnegative")
        object.__setattr__(self, "affected",
                           tuple((float(a), float(b)) for a, b in self.affected))

    def attenuation_db(self, t: np.ndarray) -> np.ndarray:
        """Attenuation profile over times ``t`` (seconds)."""
        t = np.asarray(t, dtype=float) - self.start_time
        d = self.duration
        rise = min(self.ramp_shape.rise_s, d / 2)
        fall = min(self.ramp_shape.fall_s, d / 2)
        frac = np.ones_like(t)
        if rise > 0:
            frac = np.minimum(frac, t / rise)
        if fall > 0:
            frac = np.minimum(frac, (d - t) / fall)
        frac = np.where((t < 0) | (t > d), 0.0, np.clip(frac, 0.0, 1.0))
        return self.peak_attenuation_db * frac


@dataclass(frozen=True)
class SyntheticScenarioSpec:
    base_grid: BeamGrid
    blockage_events: tuple[BlockageEvent, ...] = ()
    noise_jitter_db: float = 0.0
    seed: int = 0
    duration_s: float = 30.0
    sample_period_s: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "blockage_events", tuple(self.blockage_events))
        if self.duration_s <= 0 or self.sample_period_s <= 0:
            raise TraceError("duration and sample period must be positive")
        if self.noise_jitter_db < 0:
            raise TraceError("noise jitter must be nonnegative")
        for ev in self.blockage_events:
            for tx, rx in ev.affected:
                self.base_grid.index_of(tx, rx)


def generate_synthetic_trace(spec: SyntheticScenarioSpec) -> ChannelTrace:
    """Deterministic blockage trace: base field + trapezoid dips + Gaussian jitter."""
    period_ns = int(round(spec.sample_period_s * NS_PER_S))
    n = int(round(spec.duration_s * NS_PER_S)) // period_ns + 1
    times_ns = np.arange(n, dtype=np.int64) * period_ns
    t_s = times_ns / NS_PER_S

    base = spec.base_grid.values_dbm
    values = np.broadcast_to(base, (n,) + base.shape).copy()
    atten = np.zeros_like(values)
    for ev in spec.blockage_events:
        profile = ev.attenuation_db(t_s)
        for tx, rx in ev.affected:
            i, j = spec.base_grid.index_of(tx, rx)
            atten[:, i, j] += profile
    # overlapping events on a cell never exceed the largest single peak
    cap = np.zeros(base.shape)
    for ev in spec.blockage_events:
        for tx, rx in ev.affected:
            i, j = spec.base_grid.index_of(tx, rx)
            cap[i, j] = max(cap[i, j], ev.peak_attenuation_db)
    atten = np.minimum(atten, cap)
    values = values - atten
    if spec.noise_jitter_db > 0:
        rng = np.random.default_rng(spec.seed)
        values = values + rng.normal(0.0, spec.noise_jitter_db, size=values.shape)
    values[np.isinf(np.broadcast_to(base, values.shape))] = OUTAGE

    grids = tuple(spec.base_grid.with_values(values[k]) for k in range(n))
    return ChannelTrace(tuple(int(t) for t in times_ns), grids)


def los_reflection_grid(los_dbm: float = -55.0,
                        los_pair: tuple[float, float] = (0.0, 0.0),
                        reflections: Optional[dict] = None,
                        floor_dbm: float = -85.0,
                        angles: Sequence[float] = DEFAULT_ANGLES_DEG) -> BeamGrid:
    """Unblocked field: one dominant LOS pair, optional reflected pairs, a floor elsewhere."""
    g = BeamGrid(tuple(angles), tuple(angles), np.full((len(angles), len(angles)), floor_dbm))
    values = g.values_dbm.copy()
    i, j = g.index_of(*los_pair)
    values[i, j] = los_dbm
    for (tx, rx), p in (reflections or {}).items():
        i, j = g.index_of(tx, rx)
        values[i, j] = p
    return g.with_values(values)


# --- synthetic scenario files ----------------------------------------------------

def _grid_from_mapping(d: dict) -> BeamGrid:
    try:
        values = [[_parse_power(str(v)) if isinstance(v, str) else float(v) for v in row]
                  for row in d["values_dbm"]]
        return BeamGrid(tuple(d.get("tx_angles_deg", DEFAULT_ANGLES_DEG)),
                        tuple(d.get("rx_angles_deg", DEFAULT_ANGLES_DEG)),
                        np.array(values, dtype=float))
    except KeyError as exc:
        raise TraceError(f"base_grid is missing {exc}") from None


def scenario_spec_from_mapping(d: dict) -> SyntheticScenarioSpec:
    known = {"base_grid", "blockage_events", "noise_jitter_db", "seed",
             "duration_s", "sample_period_s"}
    unknown = set(d) - known
    if unknown:
        raise TraceError(f"unknown scenario keys: {sorted(unknown)}")
    if "base_grid" not in d:
        raise TraceError("scenario needs a base_grid")
    events = []
    for k, ev in enumerate(d.get("blockage_events") or ()):
        try:
            events.append(BlockageEvent(
                start_time=float(ev["start_time"]),
                duration=float(ev["duration"]),
                affected=tuple(tuple(p) for p in ev["affected"]),
                peak_attenuation_db=float(ev["peak_attenuation_db"]),
                ramp_shape=RampShape(**(ev.get("ramp_shape") or {})),
            ))
        except (KeyError, TypeError) as exc:
            raise TraceError(f"blockage event {k}: {exc}") from None
    return SyntheticScenarioSpec(
        base_grid=_grid_from_mapping(d["base_grid"]),
        blockage_events=tuple(events),
        noise_jitter_db=float(d.get("noise_jitter_db", 0.0)),
        seed=int(d.get("seed", 0)),
        duration_s=float(d.get("duration_s", 30.0)),
        sample_period_s=float(d.get("sample_period_s", 0.01)),
    )


def scenario_spec_to_mapping(spec: SyntheticScenarioSpec) -> dict:
    g = spec.base_grid
    return {
        "base_grid": {
            "tx_angles_deg": list(g.tx_angles_deg),
            "rx_angles_deg": list(g.rx_angles_deg),
            "values_dbm": [["outage" if v == OUTAGE else float(v) for v in row]
                           for row in g.values_dbm],
        },
        "blockage_events": [
            {
                "start_time": ev.start_time,
                "duration": ev.duration,
                "affected": [list(p) for p in ev.affected],
                "peak_attenuation_db": ev.peak_attenuation_db,
                "ramp_shape": {"rise_s": ev.ramp_shape.rise_s, "fall_s": ev.ramp_shape.fall_s},
            }
            for ev in spec.blockage_events
        ],
        "noise_jitter_db": spec.noise_jitter_db,
        "seed": spec.seed,
        "duration_s": spec.duration_s,
        "sample_period_s": spec.sample_period_s,
    }


def load_scenario_spec(path) -> SyntheticScenarioSpec:
    with Path(path).open() as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise TraceError(f"{path}: scenario file must hold a mapping")
    return scenario_spec_from_mapping(data)

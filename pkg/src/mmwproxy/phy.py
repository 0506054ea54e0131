"""Link-to-system mapping for the 60 GHz single-carrier link.

Received CW power is turned into SNR and MER, MER into mean mutual
information per coded bit (MMIB), and MMIB into a block error rate through
an erf-shaped waterfall.  The highest MCS meeting the BLER target sets the
offered rate ``R = s * B``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .channel import BeamGrid, ChannelTrace, sample_grid, select_best_beam

BOLTZMANN = 1.380649e-23  # J/K

DEFAULT_NOISE_POWER_DBM = -87.01
DEFAULT_BANDWIDTH_HZ = 5e8
DEFAULT_DELTA_DB = 6.5
DEFAULT_BLER_TARGET = 1e-2


class ConfigError(ValueError):
    """Invalid link-abstraction configuration."""


class Modulation(Enum):
    BPSK = 1
    QPSK = 2
    QAM16 = 4

    @property
    def bits_per_symbol(self) -> int:
        return self.value

    @classmethod
    def parse(cls, name: str) -> "Modulation":
        key = name.strip().upper().replace("-", "")
        if key == "16QAM":
            key = "QAM16"
        try:
            return cls[key]
        except KeyError:
            raise ConfigError(f"unknown modulation {name!r}") from None


# --- J-function (ten Brink fit) ------------------------------------------

_J_BREAK = 1.6363
_J_A1, _J_B1, _J_C1 = -0.0421061, 0.209252, -0.00640081
_J_A2, _J_B2, _J_C2, _J_D2 = 0.00181491, -0.142675, -0.0822054, 0.0549608


def _j_low(sigma: float) -> float:
    return _J_A1 * sigma**3 + _J_B1 * sigma**2 + _J_C1 * sigma


# The two branches of the fit disagree by ~6e-4 at the breakpoint; holding
# the upper branch at the lower branch's value keeps J nondecreasing.
_J_AT_BREAK = _j_low(_J_BREAK)


def j_function(sigma: float) -> float:
    """Mutual information of a BPSK-like LLR with std ``sigma``, in [0, 1]."""
    if sigma <= 0.0:
        return 0.0
    if sigma <= _J_BREAK:
        return max(0.0, _j_low(sigma))
    if sigma < 10.0:
        upper = 1.0 - math.exp(_J_A2 * sigma**3 + _J_B2 * sigma**2 + _J_C2 * sigma + _J_D2)
        return max(_J_AT_BREAK, upper)
    return 1.0


# 16-QAM bit-level MMIB: weighted J terms in sqrt(gamma).
QAM16_TERMS: tuple[tuple[float, float], ...] = ((0.5, 0.8818), (0.25, 1.6764), (0.25, 0.9316))


def mmib_from_mer(mer_db: float, modulation: Modulation,
                  qam16_terms: Sequence[tuple[float, float]] = QAM16_TERMS) -> float:
    if mer_db == -math.inf:
        return 0.0
    if mer_db == math.inf:
        return 1.0
    gamma = 10.0 ** (mer_db / 10.0)
    if modulation is Modulation.BPSK:
        return j_function(math.sqrt(8.0 * gamma))
    if modulation is Modulation.QPSK:
        return j_function(math.sqrt(4.0 * gamma))
    root = math.sqrt(gamma)
    return sum(w * j_function(a * root) for w, a in qam16_terms)


def bler_from_mmib(mmib: float, x1: float, x2: float) -> float:
    """Erf waterfall; 0.5 exactly at ``mmib == x1``."""
    if x2 <= 0:
        raise ConfigError(f"BLER curve width X2 must be positive, got {x2}")
    return 0.5 * (1.0 - math.erf((mmib - x1) / (math.sqrt(2.0) * x2)))


def noise_power(bandwidth_hz: float, temperature_k: float) -> float:
    """Thermal noise power ``10 log10(k T B) + 30`` in dBm."""
    return 10.0 * math.log10(BOLTZMANN * temperature_k * bandwidth_hz) + 30.0


def snr_from_cw(p_rx_dbm: float, p_noise_dbm: float) -> float:
    return p_rx_dbm - p_noise_dbm


def mer_from_snr(snr_db: float, delta_db: float) -> float:
    return snr_db - delta_db


# --- MCS table ------------------------------------------------------------

@dataclass(frozen=True)
class McsEntry:
    index: int
    modulation: Modulation
    code_rate: float
    spectral_efficiency: float
    x1: float
    x2: float

    def __post_init__(self):
        if not 0 < self.code_rate <= 1:
            raise ConfigError(f"MCS {self.index}: code rate {self.code_rate} outside (0, 1]")
        if self.x2 <= 0:
            raise ConfigError(f"MCS {self.index}: X2 must be positive")
        expected = self.modulation.bits_per_symbol * self.code_rate
        if not math.isclose(self.spectral_efficiency, expected, rel_tol=1e-9):
            raise ConfigError(
                f"MCS {self.index}: spectral efficiency {self.spectral_efficiency} "
                f"!= bits/symbol * code rate = {expected}")

    def bler(self, mer_db: float) -> float:
        return bler_from_mmib(mmib_from_mer(mer_db, self.modulation), self.x1, self.x2)


class McsTable(tuple):
    """Immutable, index-sorted sequence of :class:`McsEntry`."""

    def __new__(cls, entries):
        entries = sorted(entries, key=lambda e: e.index)
        if not entries:
            raise ConfigError("MCS table is empty")
        for lo, hi in zip(entries, entries[1:]):
            if hi.index == lo.index:
                raise ConfigError(f"duplicate MCS index {hi.index}")
            if hi.spectral_efficiency <= lo.spectral_efficiency:
                raise ConfigError(
                    f"spectral efficiency must increase with index (MCS {lo.index} -> {hi.index})")
        return super().__new__(cls, entries)

    def by_index(self, index: int) -> McsEntry:
        for e in self:
            if e.index == index:
                return e
        raise KeyError(index)

    @property
    def lowest(self) -> McsEntry:
        return self[0]

    @property
    def highest(self) -> McsEntry:
        return self[-1]


MCS_TABLE_COLUMNS = ("index", "modulation", "code_rate", "spectral_efficiency", "x1", "x2")


def load_mcs_table(path=None) -> McsTable:
    """Read an MCS table CSV; ``None`` loads the bundled 802.11ad SC table."""
    if path is None:
        text = resources.files("mmwproxy.data").joinpath("mcs_sc.csv").read_text()
    else:
        text = Path(path).read_text()
    reader = csv.DictReader(text.splitlines())
    if tuple(reader.fieldnames or ()) != MCS_TABLE_COLUMNS:
        raise ConfigError(f"MCS table header must be {','.join(MCS_TABLE_COLUMNS)}")
    entries = []
    for lineno, row in enumerate(reader, start=2):
        try:
            entries.append(McsEntry(
                index=int(row["index"]),
                modulation=Modulation.parse(row["modulation"]),
                code_rate=float(row["code_rate"]),
                spectral_efficiency=float(row["spectral_efficiency"]),
                x1=float(row["x1"]),
                x2=float(row["x2"]),
            ))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"MCS table line {lineno}: {exc}") from exc
    return McsTable(entries)


# --- link abstraction -------------------------------------------------------

@dataclass
class LinkAbstractionConfig:
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ
    noise_power_dbm: float = DEFAULT_NOISE_POWER_DBM
    delta_db: float = DEFAULT_DELTA_DB
    bler_target: float = DEFAULT_BLER_TARGET
    mcs_table: McsTable = field(default_factory=load_mcs_table)

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ConfigError("bandwidth must be positive")
        if not 0 < self.bler_target < 1:
            raise ConfigError("bler_target must lie in (0, 1)")
        if self.delta_db < 0:
            raise ConfigError("delta_db must be nonnegative")


def select_mcs(mer_db: float, config: LinkAbstractionConfig) -> Optional[McsEntry]:
    """Highest-index MCS whose BLER at ``mer_db`` meets the target, else ``None``."""
    for entry in reversed(config.mcs_table):
        if entry.bler(mer_db) <= config.bler_target:
            return entry
    return None


def offered_rate(mcs: McsEntry, bandwidth_hz: float) -> int:
    """Offered PHY rate ``s * B`` in integer bit/s."""
    if bandwidth_hz <= 0:
        raise ConfigError("bandwidth must be positive")
    return int(round(mcs.spectral_efficiency * bandwidth_hz))


@dataclass(frozen=True)
class LinkState:
    time: int
    beam_pair: Optional[tuple[float, float]]
    p_rx_dbm: float
    snr_db: float
    mer_db: float
    mcs: Optional[McsEntry]
    rate_bps: int
    bler: float

    @property
    def mcs_index(self) -> int:
        """MCS index, 0 meaning outage."""
        return self.mcs.index if self.mcs is not None else 0

    @property
    def in_outage(self) -> bool:
        return self.mcs is None


def link_from_grid(grid: BeamGrid, t: int, config: LinkAbstractionConfig) -> LinkState:
    best = select_best_beam(grid)
    if best is None:
        return LinkState(t, None, -math.inf, -math.inf, -math.inf, None, 0, 1.0)
    tx, rx, p_rx = best
    snr = snr_from_cw(p_rx, config.noise_power_dbm)
    mer = mer_from_snr(snr, config.delta_db)
    mcs = select_mcs(mer, config)
    if mcs is None:
        return LinkState(t, (tx, rx), p_rx, snr, mer, None, 0, 1.0)
    return LinkState(t, (tx, rx), p_rx, snr, mer, mcs,
                     offered_rate(mcs, config.bandwidth_hz), mcs.bler(mer))


def update_link(trace: ChannelTrace, t: int, config: LinkAbstractionConfig,
                interpolation: str = "db") -> LinkState:
    """Sample the trace at ``t`` (ns) and run beam selection plus AMC."""
    return link_from_grid(sample_grid(trace, t, interpolation), t, config)


def mer_threshold(entry: McsEntry, bler_target: float,
                  lo: float = -30.0, hi: float = 60.0, tol: float = 1e-6) -> float:
    """Smallest MER (dB) at which ``entry`` meets ``bler_target``, by bisection."""
    if entry.bler(hi) > bler_target:
        return math.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if entry.bler(mid) <= bler_target:
            hi = mid
        else:
            lo = mid
    return hi

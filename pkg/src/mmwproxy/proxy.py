"""Cross-layer proxy: turns AP link reports into congestion-window commands."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .engine import NS_PER_S, Simulator, seconds_to_ns
from .phy import LinkState, McsTable, offered_rate


class Policy(Enum):
    BASELINE = "baseline"
    REACTIVE = "reactive"
    PROACTIVE = "proactive"

    @classmethod
    def parse(cls, name) -> "Policy":
        if isinstance(name, Policy):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(f"unknown policy {name!r}; expected one of "
                             f"{[p.value for p in cls]}") from None


class ProactiveMode(Enum):
    NORMAL = "Normal"
    CONSERVATIVE = "Conservative"
    RAMPING = "Ramping"


# transitions the proactive controller may take
ALLOWED_TRANSITIONS = {
    (ProactiveMode.NORMAL, ProactiveMode.CONSERVATIVE),
    (ProactiveMode.CONSERVATIVE, ProactiveMode.RAMPING),
    (ProactiveMode.RAMPING, ProactiveMode.NORMAL),
    (ProactiveMode.RAMPING, ProactiveMode.CONSERVATIVE),
}


@dataclass
class ProxyConfig:
    """Policy parameters; durations in seconds."""

    policy: Policy = Policy.REACTIVE
    detection_window: float = 0.150
    mcs_drop_threshold: int = 2
    ttr: float = 0.8
    ramp_fraction: float = 0.25
    report_latency: float = 0.001

    def __post_init__(self):
        self.policy = Policy.parse(self.policy)
        if self.detection_window <= 0 or self.ttr <= 0:
            raise ValueError("detection_window and ttr must be positive")
        if not 0 < self.ramp_fraction <= 1:
            raise ValueError("ramp_fraction must lie in (0, 1]")
        if self.report_latency < 0:
            raise ValueError("report_latency must be nonnegative")
        if self.mcs_drop_threshold < 1:
            raise ValueError("mcs_drop_threshold must be at least 1")


@dataclass(frozen=True)
class ApReport:
    time: int
    mcs_index: int          # 0 = outage
    rate_bps: int
    beam_pair: Optional[tuple[float, float]] = None
    grid: object = None


def emit_report_if_bdp_changed(link: LinkState, last_reported_rate: Optional[int]) -> Optional[ApReport]:
    """Report only when the offered rate (hence the BDP) changed."""
    if last_reported_rate is not None and link.rate_bps == last_reported_rate:
        return None
    return ApReport(link.time, link.mcs_index, link.rate_bps, link.beam_pair)


def bdp_bytes(rate_bps: int, t_min_ns: int) -> int:
    return rate_bps * t_min_ns // (8 * NS_PER_S)


def reactive_on_report(report: ApReport, t_min_ns: int, mss_bytes: int) -> int:
    """cwnd = R * T_min in bytes, never below one MSS."""
    if t_min_ns <= 0:
        raise ValueError("t_min must be positive")
    c = bdp_bytes(report.rate_bps, t_min_ns)
    return c if c > mss_bytes else mss_bytes


class MinRttTracker:
    def __init__(self, prior_ns: int):
        self.prior_ns = prior_ns
        self.value: Optional[int] = None

    def track_min_rtt(self, sample_ns: int) -> int:
        if sample_ns <= 0:
            raise ValueError("RTT sample must be positive")
        if self.value is None or sample_ns < self.value:
            self.value = sample_ns
        return self.value

    @property
    def t_min(self) -> int:
        return self.value if self.value is not None else self.prior_ns


@dataclass
class ProactiveState:
    mode: ProactiveMode = ProactiveMode.NORMAL
    mcs_history: deque = field(default_factory=deque)   # (time_ns, mcs_index)
    ttr_deadline: Optional[int] = None
    ramp_current_bytes: float = 0.0
    rate_bps: int = 0
    transitions: list = field(default_factory=list)     # (time_ns, from, to)


class ProactiveController:
    """Heuristic that pins cwnd to the minimum BDP after a fast MCS drop.

    Entry: the current MCS sits ``mcs_drop_threshold`` or more below the
    highest MCS in effect during the trailing detection window.  The
    conservative phase lasts exactly ``ttr`` no matter how the channel
    behaves; afterwards cwnd climbs toward ``R * T_min`` by ``ramp_fraction``
    of the remaining gap once per RTT.  An outage holds cwnd at one MSS.
    """

    def __init__(self, config: ProxyConfig, mcs_table: McsTable, bandwidth_hz: float,
                 mss_bytes: int):
        self.cfg = config
        self.mss = mss_bytes
        self.window_ns = seconds_to_ns(config.detection_window)
        self.ttr_ns = seconds_to_ns(config.ttr)
        self.min_rate = offered_rate(mcs_table.lowest, bandwidth_hz)
        self.state = ProactiveState()

    def min_bdp(self, t_min_ns: int) -> int:
        return max(bdp_bytes(self.min_rate, t_min_ns), self.mss)

    def target(self, t_min_ns: int) -> int:
        return max(bdp_bytes(self.state.rate_bps, t_min_ns), self.mss)

    def _set_mode(self, now: int, mode: ProactiveMode) -> None:
        s = self.state
        if (s.mode, mode) not in ALLOWED_TRANSITIONS:
            raise AssertionError(f"illegal proactive transition {s.mode} -> {mode}")
        s.transitions.append((now, s.mode, mode))
        s.mode = mode

    def window_max_mcs(self, now: int) -> int:
        # the MCS in effect at the window start counts too
        h = self.state.mcs_history
        start = now - self.window_ns
        while len(h) >= 2 and h[1][0] <= start:
            h.popleft()
        return max(m for _, m in h)

    def drop_detected(self, now: int) -> bool:
        h = self.state.mcs_history
        if not h:
            return False
        return self.window_max_mcs(now) - h[-1][1] >= self.cfg.mcs_drop_threshold

    def commanded(self, t_min_ns: int) -> int:
        s = self.state
        if s.rate_bps == 0:
            return self.mss
        if s.mode is ProactiveMode.CONSERVATIVE:
            return self.min_bdp(t_min_ns)
        if s.mode is ProactiveMode.RAMPING:
            return max(int(s.ramp_current_bytes), self.mss)
        return self.target(t_min_ns)

    def on_report(self, report: ApReport, now: int, t_min_ns: int) -> int:
        s = self.state
        s.mcs_history.append((now, report.mcs_index))
        s.rate_bps = report.rate_bps
        if s.mode is not ProactiveMode.CONSERVATIVE and self.drop_detected(now):
            self._enter_conservative(now)
        elif s.mode is ProactiveMode.RAMPING:
            # never command more than the current BDP
            tgt = self.target(t_min_ns)
            if s.ramp_current_bytes > tgt:
                s.ramp_current_bytes = tgt
        return self.commanded(t_min_ns)

    def _enter_conservative(self, now: int) -> None:
        self._set_mode(now, ProactiveMode.CONSERVATIVE)
        self.state.ttr_deadline = now + self.ttr_ns

    def on_ttr_expiry(self, now: int, t_min_ns: int) -> int:
        s = self.state
        if s.mode is not ProactiveMode.CONSERVATIVE or s.ttr_deadline != now:
            return self.commanded(t_min_ns)
        s.ttr_deadline = None
        self._set_mode(now, ProactiveMode.RAMPING)
        s.ramp_current_bytes = float(self.min_bdp(t_min_ns))
        return self.on_ramp_tick(now, t_min_ns, step=False)

    def on_ramp_tick(self, now: int, t_min_ns: int, step: bool = True) -> int:
        """One RTT of ramping; returns to Normal once within one MSS of target."""
        s = self.state
        if s.mode is not ProactiveMode.RAMPING:
            return self.commanded(t_min_ns)
        tgt = self.target(t_min_ns)
        if tgt - s.ramp_current_bytes <= self.mss:
            s.ramp_current_bytes = float(tgt)
            self._set_mode(now, ProactiveMode.NORMAL)
        elif step:
            s.ramp_current_bytes += self.cfg.ramp_fraction * (tgt - s.ramp_current_bytes)
        return self.commanded(t_min_ns)


class Proxy:
    """Event-driven wrapper: receives reports and RTT samples, commands the sender."""

    def __init__(self, sim: Simulator, config: ProxyConfig, set_cwnd: Callable[[int], None],
                 mcs_table: McsTable, bandwidth_hz: float, mss_bytes: int, t_min_prior_ns: int,
                 event_sink: Optional[list] = None):
        self.sim = sim
        self.cfg = config
        self.set_cwnd = set_cwnd
        self.mss = mss_bytes
        self.rtt = MinRttTracker(t_min_prior_ns)
        self.last_report: Optional[ApReport] = None
        self.commanded_cwnd: Optional[int] = None
        self.events = event_sink if event_sink is not None else []
        self.history: list[tuple[int, int]] = []   # (time, commanded cwnd)
        self.proactive = (ProactiveController(config, mcs_table, bandwidth_hz, mss_bytes)
                          if config.policy is Policy.PROACTIVE else None)
        self._ramp_scheduled = False

    @property
    def t_min(self) -> int:
        return self.rtt.t_min

    def on_rtt_sample(self, rtt_ns: int) -> None:
        before = self.rtt.value
        now_min = self.rtt.track_min_rtt(rtt_ns)
        if now_min != before and self.last_report is not None:
            self._recommand("t_min")

    def deliver_report(self, report: ApReport) -> None:
        """Called at the AP; the proxy sees the report after the control-path delay."""
        self.sim.schedule_in(seconds_to_ns(self.cfg.report_latency), self.on_report, report)

    def on_report(self, report: ApReport) -> None:
        self.last_report = report
        if self.cfg.policy is Policy.BASELINE:
            self._log("report", None)
            return
        if self.proactive is None:
            self._command(reactive_on_report(report, self.t_min, self.mss), "report")
            return
        before = len(self.proactive.state.transitions)
        c = self.proactive.on_report(report, self.sim.now, self.t_min)
        self._after_proactive(before, c, "report")

    def _recommand(self, reason: str) -> None:
        if self.cfg.policy is Policy.REACTIVE:
            self._command(reactive_on_report(self.last_report, self.t_min, self.mss), reason)
        elif self.proactive is not None:
            self._command(self.proactive.commanded(self.t_min), reason)

    def _after_proactive(self, n_before: int, cwnd: int, reason: str) -> None:
        st = self.proactive.state
        for _, _, mode in st.transitions[n_before:]:
            self._log(f"enter_{mode.value.lower()}", cwnd)
            if mode is ProactiveMode.CONSERVATIVE:
                self.sim.schedule(st.ttr_deadline, self._ttr_expired)
        if st.mode is ProactiveMode.RAMPING and not self._ramp_scheduled:
            self._ramp_scheduled = True
            self.sim.schedule_in(self.t_min, self._ramp_tick)
        self._command(cwnd, reason)

    def _ttr_expired(self) -> None:
        before = len(self.proactive.state.transitions)
        c = self.proactive.on_ttr_expiry(self.sim.now, self.t_min)
        self._after_proactive(before, c, "ttr_expiry")

    def _ramp_tick(self) -> None:
        self._ramp_scheduled = False
        before = len(self.proactive.state.transitions)
        c = self.proactive.on_ramp_tick(self.sim.now, self.t_min)
        self._after_proactive(before, c, "ramp")

    def _command(self, cwnd: int, reason: str) -> None:
        if cwnd == self.commanded_cwnd:
            return
        self.commanded_cwnd = cwnd
        self.history.append((self.sim.now, cwnd))
        self._log(reason, cwnd)
        self.set_cwnd(cwnd)

    def _log(self, event: str, cwnd: Optional[int]) -> None:
        mcs = self.last_report.mcs_index if self.last_report is not None else 0
        self.events.append((self.sim.now, event, mcs, cwnd if cwnd is not None else ""))

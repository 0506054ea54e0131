"""Simplified TCP: slow start, CUBIC congestion avoidance, fast retransmit,
RTO with backoff, and an external congestion-window override.

Sequence numbers and windows are in payload bytes.  Every data segment
carries a full MSS (the bulk sender never runs dry).  There is no SACK: the
sender estimates data that already left the network from the duplicate-ACK
count, which keeps the send window open during recovery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from .engine import NS_PER_MS, NS_PER_S, Simulator, seconds_to_ns
from .net import DEFAULT_HEADER_BYTES, DEFAULT_SEGMENT_BYTES, FlowMetrics, Packet


class Mode(Enum):
    SLOW_START = "SlowStart"
    CONGESTION_AVOIDANCE = "CongestionAvoidance"
    FAST_RECOVERY = "FastRecovery"
    RTO_RECOVERY = "RtoRecovery"
    PROXY_STEERED = "ProxySteered"


@dataclass
class TransportConfig:
    mss_bytes: int = DEFAULT_SEGMENT_BYTES
    header_bytes: int = DEFAULT_HEADER_BYTES
    ack_bytes: int = DEFAULT_HEADER_BYTES
    initial_cwnd_segments: int = 10
    initial_rto: float = 1.0
    min_rto: float = 0.2
    max_rto: float = 8.0
    cubic_c: float = 0.4
    cubic_beta: float = 0.7
    dupack_threshold: int = 3
    receiver_window_bytes: Optional[int] = None

    def __post_init__(self):
        if self.mss_bytes <= 0:
            raise ValueError("mss_bytes must be positive")
        if not 0 < self.cubic_beta < 1 or self.cubic_c <= 0:
            raise ValueError("CUBIC needs c > 0 and 0 < beta < 1")
        if not 0 < self.min_rto <= self.max_rto:
            raise ValueError("need 0 < min_rto <= max_rto")


@dataclass
class CubicState:
    """CUBIC epoch state; window values in bytes, ``c_cubic`` in MSS/s^3."""

    w_max_bytes: float = 0.0
    k_seconds: float = 0.0
    epoch_start: Optional[int] = None
    c_cubic: float = 0.4
    beta: float = 0.7
    mss_bytes: int = DEFAULT_SEGMENT_BYTES

    def on_loss(self, cwnd_bytes: float) -> None:
        self.w_max_bytes = cwnd_bytes
        self.epoch_start = None

    def start_epoch(self, now: int, cwnd_bytes: float) -> None:
        self.epoch_start = now
        if self.w_max_bytes <= cwnd_bytes:
            self.w_max_bytes = cwnd_bytes
            self.k_seconds = 0.0
        else:
            gap_mss = (self.w_max_bytes - cwnd_bytes) / self.mss_bytes
            self.k_seconds = (gap_mss / self.c_cubic) ** (1.0 / 3.0)


def cubic_window(cubic: CubicState, t) -> float:
    """``W(t) = C (t - epoch_start - K)^3 + W_max`` in bytes, floored at one MSS."""
    dt = (t - cubic.epoch_start) / NS_PER_S - cubic.k_seconds
    w = cubic.c_cubic * dt * dt * dt * cubic.mss_bytes + cubic.w_max_bytes
    return w if w > cubic.mss_bytes else float(cubic.mss_bytes)


def new_loss_epoch(w_max_bytes: float, now: int, c_cubic: float = 0.4, beta: float = 0.7,
                   mss_bytes: int = DEFAULT_SEGMENT_BYTES) -> CubicState:
    """Epoch that starts right after a multiplicative decrease from ``w_max_bytes``."""
    s = CubicState(c_cubic=c_cubic, beta=beta, mss_bytes=mss_bytes)
    s.on_loss(w_max_bytes)
    s.start_epoch(now, beta * w_max_bytes)
    return s


class TcpSender:
    """Bulk-data TCP sender for a single flow."""

    def __init__(self, sim: Simulator, config: TransportConfig,
                 transmit: Callable[[Packet], object], metrics: FlowMetrics,
                 flow_id: int = 0, min_rtt_prior: int = 40 * NS_PER_MS):
        self.sim = sim
        self.cfg = config
        self.transmit = transmit
        self.metrics = metrics
        self.flow_id = flow_id
        self.mss = config.mss_bytes
        self.packet_bytes = config.mss_bytes + config.header_bytes

        self.cwnd: float = float(config.initial_cwnd_segments * self.mss)
        self.ssthresh: float = math.inf
        self.mode = Mode.SLOW_START
        self.snd_una = 0
        self.snd_nxt = 0
        self.snd_max = 0
        self.dupack_count = 0
        self.ooo_bytes = 0          # bytes known (via dupACKs) to have left the network
        self.in_recovery = False
        self.in_loss = False        # go-back-N after a timeout, until recover is acked
        self._loss_una = -1
        self._partial_acked = False
        self.recover = 0
        self.cubic = CubicState(c_cubic=config.cubic_c, beta=config.cubic_beta, mss_bytes=self.mss)

        self.srtt: Optional[int] = None
        self.rttvar: Optional[int] = None
        self.rto = seconds_to_ns(config.initial_rto)
        self._min_rto = seconds_to_ns(config.min_rto)
        self._max_rto = seconds_to_ns(config.max_rto)
        self._min_rtt: Optional[int] = None
        self.min_rtt_prior = min_rtt_prior

        self.running = False        # no data leaves before start()
        self.steered = False
        self.override_cwnd: Optional[int] = None
        self.rtt_listeners: list[Callable[[int], None]] = []

        self._rto_deadline: Optional[int] = None
        self._rto_check_at: Optional[int] = None

    # -- window accounting -------------------------------------------------

    @property
    def bytes_in_flight(self) -> int:
        f = self.snd_nxt - self.snd_una - self.ooo_bytes
        return f if f > 0 else 0

    def min_rtt(self) -> int:
        return self._min_rtt if self._min_rtt is not None else self.min_rtt_prior

    # -- sending -------------------------------------------------------------

    def start(self) -> int:
        self.running = True
        return self.try_send()

    def try_send(self) -> int:
        """Emit segments while one more MSS fits in the window."""
        if not self.running:
            return 0
        mss = self.mss
        limit = self.cwnd
        rwnd = self.cfg.receiver_window_bytes
        n = 0
        while self.snd_nxt - self.snd_una - self.ooo_bytes + mss <= limit:
            if rwnd is not None and self.snd_nxt + mss - self.snd_una > rwnd:
                break
            seq = self.snd_nxt
            self._emit(seq, seq < self.snd_max)
            self.snd_nxt = seq + mss
            if self.snd_nxt > self.snd_max:
                self.snd_max = self.snd_nxt
            n += 1
        if n and self._rto_deadline is None:
            self._arm_rto()
        return n

    def _emit(self, seq: int, retransmission: bool) -> None:
        m = self.metrics
        m.packets_sent += 1
        if retransmission:
            m.retransmissions += 1
        self.transmit(Packet(self.flow_id, seq, self.packet_bytes, False,
                             self.sim.now, 0, retransmission))

    def _retransmit_head(self) -> None:
        self._emit(self.snd_una, True)
        if self._rto_deadline is None:
            self._arm_rto()

    # -- ACK processing --------------------------------------------------------

    def on_ack(self, p: Packet) -> None:
        now = self.sim.now
        self._rtt_sample(now, now - p.echo_timestamp)
        ack = p.seq_number
        if ack > self.snd_una:
            self._on_new_ack(ack, now)
        elif ack == self.snd_una and self.snd_max > self.snd_una and not p.duplicate:
            # ACKs for data the receiver already held say nothing about loss
            self.on_dupack()
        self.try_send()

    def _on_new_ack(self, ack: int, now: int) -> None:
        mss = self.mss
        acked = ack - self.snd_una
        self.snd_una = ack
        if self.snd_nxt < ack:
            self.snd_nxt = ack
        if self.snd_max < ack:
            self.snd_max = ack
        self.dupack_count = 0
        if self.in_loss:
            # dupACKs after a timeout mostly answer resent duplicates
            self.ooo_bytes = 0
            if ack >= self.recover:
                self.in_loss = False
        else:
            ooo = self.ooo_bytes - (acked - mss)
            self.ooo_bytes = ooo if ooo > 0 else 0

        restart_timer = True
        if self.in_recovery:
            if ack >= self.recover:
                # segments held above recover stay counted as out of the network
                self.in_recovery = False
                if not self.steered:
                    self.mode = Mode.CONGESTION_AVOIDANCE
                    self.cwnd = self.ssthresh
            else:
                # "impatient" NewReno: only the first partial ACK rearms the timer
                restart_timer = not self._partial_acked
                self._partial_acked = True
                self._retransmit_head()
        elif not self.steered:
            if self.mode is Mode.RTO_RECOVERY and ack >= self.recover:
                self.mode = Mode.SLOW_START
            if self.cwnd < self.ssthresh:
                self.cwnd += acked if acked < mss else mss
            else:
                if self.mode is not Mode.CONGESTION_AVOIDANCE:
                    self.mode = Mode.CONGESTION_AVOIDANCE
                if self.cubic.epoch_start is None:
                    self.cubic.start_epoch(now, self.cwnd)
                self.cwnd = cubic_window(self.cubic, now)

        if self.snd_una >= self.snd_max:
            self._rto_deadline = None
        elif restart_timer:
            self._rto_deadline = now + self.rto
            if self._rto_check_at is None or self._rto_deadline < self._rto_check_at:
                self._schedule_rto_check(self._rto_deadline)

    def on_dupack(self) -> bool:
        """Count a duplicate ACK; the threshold-th one triggers fast retransmit."""
        mss = self.mss
        self.dupack_count += 1
        if not self.in_loss:
            cap = self.snd_max - self.snd_una - mss
            self.ooo_bytes = min(self.ooo_bytes + mss, cap if cap > 0 else 0)
        if (self.in_recovery or self.dupack_count != self.cfg.dupack_threshold
                or self.snd_una < self.recover):
            return False
        self.metrics.fast_retransmits += 1
        self.in_recovery = True
        self._partial_acked = False
        self.recover = self.snd_max
        if not self.steered:
            self.cubic.on_loss(self.cwnd)
            self.ssthresh = max(self.cwnd * self.cfg.cubic_beta, 2.0 * mss)
            self.cwnd = self.ssthresh
            self.mode = Mode.FAST_RECOVERY
        self._retransmit_head()
        return True

    # -- RTT estimation ----------------------------------------------------------

    def _rtt_sample(self, now: int, rtt: int) -> None:
        self.metrics.add_rtt(now, rtt)
        if self._min_rtt is None or rtt < self._min_rtt:
            self._min_rtt = rtt
        if self.srtt is None:
            self.srtt = rtt
            self.rttvar = rtt // 2
        else:
            self.rttvar = (3 * self.rttvar + abs(self.srtt - rtt)) // 4
            self.srtt = (7 * self.srtt + rtt) // 8
        rto = self.srtt + max(NS_PER_MS, 4 * self.rttvar)
        self.rto = min(max(rto, self._min_rto), self._max_rto)
        for cb in self.rtt_listeners:
            cb(rtt)

    # -- retransmission timer ----------------------------------------------------

    def _arm_rto(self) -> None:
        self._rto_deadline = self.sim.now + self.rto
        if self._rto_check_at is None or self._rto_deadline < self._rto_check_at:
            self._schedule_rto_check(self._rto_deadline)

    def _schedule_rto_check(self, at: int) -> None:
        self._rto_check_at = at
        self.sim.schedule(at, self._rto_check, at)

    def _rto_check(self, scheduled_for: int) -> None:
        if scheduled_for != self._rto_check_at:
            return  # superseded by an earlier check
        self._rto_check_at = None
        if self._rto_deadline is None:
            return
        if self.sim.now < self._rto_deadline:
            self._schedule_rto_check(self._rto_deadline)
            return
        self.on_rto()

    def on_rto(self) -> None:
        """Timeout: halve ssthresh, collapse cwnd, go back to snd_una, back off."""
        self._rto_deadline = None
        if self.snd_una >= self.snd_max:
            return
        mss = self.mss
        self.metrics.rto_count += 1
        if not (self.in_loss and self.snd_una == self._loss_una):
            # a backed-off timer firing again for the same hole keeps ssthresh
            self.ssthresh = max(self.cwnd / 2.0, 2.0 * mss)
            if not self.steered:
                self.cubic.on_loss(self.cwnd)
        self._loss_una = self.snd_una
        if not self.steered:
            self.mode = Mode.RTO_RECOVERY
        self.cwnd = float(mss)
        self.snd_nxt = self.snd_una
        self.dupack_count = 0
        self.ooo_bytes = 0
        self.in_recovery = False
        self.in_loss = True
        self.recover = self.snd_max
        self.rto = min(2 * self.rto, self._max_rto)
        self.try_send()  # retransmits the head segment
        if self.steered:
            self.cwnd = float(self.override_cwnd)
            self.try_send()
        if self._rto_deadline is None:
            self._arm_rto()

    # -- proxy hook -------------------------------------------------------------

    def set_cwnd_override(self, cwnd_bytes: int) -> None:
        if cwnd_bytes < self.mss:
            raise ValueError(f"override {cwnd_bytes} B is below one MSS ({self.mss} B)")
        self.steered = True
        self.mode = Mode.PROXY_STEERED
        self.override_cwnd = int(cwnd_bytes)
        self.cwnd = float(cwnd_bytes)
        self.try_send()


class TcpReceiver:
    """Cumulative-ACK sink; ACKs every segment and echoes its send timestamp."""

    def __init__(self, mss_bytes: int = DEFAULT_SEGMENT_BYTES,
                 ack_bytes: int = DEFAULT_HEADER_BYTES,
                 on_delivered: Optional[Callable[[int, int], None]] = None):
        self.mss = mss_bytes
        self.ack_bytes = ack_bytes
        self.rcv_nxt = 0
        self.out_of_order: set[int] = set()
        self.on_delivered = on_delivered
        self.duplicates = 0

    def on_data(self, p: Packet, now: int) -> Packet:
        seq = p.seq_number
        if seq == self.rcv_nxt:
            nxt = seq + self.mss
            ooo = self.out_of_order
            while nxt in ooo:
                ooo.remove(nxt)
                nxt += self.mss
            if self.on_delivered is not None:
                self.on_delivered(now, nxt - self.rcv_nxt)
            self.rcv_nxt = nxt
        elif seq > self.rcv_nxt and seq not in self.out_of_order:
            self.out_of_order.add(seq)
        else:
            self.duplicates += 1
            return Packet(p.flow_id, self.rcv_nxt, self.ack_bytes, True, now, p.send_timestamp,
                          duplicate=True)
        return Packet(p.flow_id, self.rcv_nxt, self.ack_bytes, True, now, p.send_timestamp)

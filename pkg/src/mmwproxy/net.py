"""Packets, links, the AP tail-drop queue and per-flow metrics."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .engine import NS_PER_S, Simulator

DEFAULT_SEGMENT_BYTES = 8140
DEFAULT_HEADER_BYTES = 60
DEFAULT_QUEUE_CAPACITY = 500


class Packet:
    __slots__ = ("flow_id", "seq_number", "size_bytes", "is_ack", "send_timestamp",
                 "echo_timestamp", "retransmission", "duplicate")

    def __init__(self, flow_id: int, seq_number: int, size_bytes: int, is_ack: bool = False,
                 send_timestamp: int = 0, echo_timestamp: int = 0, retransmission: bool = False,
                 duplicate: bool = False):
        if size_bytes <= 0:
            raise ValueError("packet size must be positive")
        self.flow_id = flow_id
        self.seq_number = seq_number
        self.size_bytes = size_bytes
        self.is_ack = is_ack
        self.send_timestamp = send_timestamp
        self.echo_timestamp = echo_timestamp
        self.retransmission = retransmission
        self.duplicate = duplicate      # ACK answers data the receiver already had

    def __repr__(self):
        kind = "ack" if self.is_ack else "data"
        return f"Packet({kind} flow={self.flow_id} seq={self.seq_number} size={self.size_bytes})"


def serialization_ns(size_bytes: int, rate_bps: int) -> int:
    """Transmission time in ns, rounded up."""
    return -(-size_bytes * 8 * NS_PER_S // rate_bps)


class WiredLink:
    """Fixed-rate, fixed-delay point-to-point link that never drops."""

    def __init__(self, sim: Simulator, rate_bps: int, one_way_delay: int,
                 deliver: Callable[[Packet], None]):
        if rate_bps <= 0 or one_way_delay < 0:
            raise ValueError("wired link needs a positive rate and nonnegative delay")
        self.sim = sim
        self.rate_bps = int(rate_bps)
        self.one_way_delay = int(one_way_delay)
        self.deliver = deliver
        self.busy_until = 0
        self.in_transit = 0
        self._ser_cache: dict[int, int] = {}

    def send(self, p: Packet) -> int:
        """Serialize behind earlier packets; returns the delivery time."""
        ser = self._ser_cache.get(p.size_bytes)
        if ser is None:
            ser = self._ser_cache[p.size_bytes] = serialization_ns(p.size_bytes, self.rate_bps)
        start = self.sim.now if self.sim.now > self.busy_until else self.busy_until
        self.busy_until = start + ser
        arrival = self.busy_until + self.one_way_delay
        self.in_transit += 1
        self.sim.schedule(arrival, self._arrive, p)
        return arrival

    def _arrive(self, p: Packet) -> None:
        self.in_transit -= 1
        self.deliver(p)


class FifoQueue:
    """Packet-count-limited tail-drop FIFO (pfifo)."""

    def __init__(self, capacity_packets: int = DEFAULT_QUEUE_CAPACITY):
        if capacity_packets < 0:
            raise ValueError("queue capacity must be nonnegative")
        self.capacity_packets = capacity_packets
        self.backlog: deque[Packet] = deque()
        self.drop_count = 0
        self.max_backlog = 0

    def __len__(self):
        return len(self.backlog)

    def enqueue(self, p: Packet) -> bool:
        if len(self.backlog) >= self.capacity_packets:
            self.drop_count += 1
            return False
        self.backlog.append(p)
        if len(self.backlog) > self.max_backlog:
            self.max_backlog = len(self.backlog)
        return True

    def dequeue(self) -> Optional[Packet]:
        return self.backlog.popleft() if self.backlog else None


def percentile(samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: element ``ceil(p * N)`` (1-based) of the sorted samples."""
    if not samples:
        raise ValueError("percentile of an empty sample set (no packets delivered)")
    if not 0 < p <= 1:
        raise ValueError(f"percentile rank must lie in (0, 1], got {p}")
    ordered = sorted(samples)
    rank = math.ceil(round(p * len(ordered), 9))
    return ordered[max(rank, 1) - 1]


@dataclass
class FlowMetrics:
    """Everything a run records about the flow; times and RTTs in ns."""

    throughput_window: int = NS_PER_S // 10
    rtt_times: list = field(default_factory=list)
    rtt_values: list = field(default_factory=list)
    delivered_bytes: int = 0
    window_bytes: list = field(default_factory=list)
    cwnd_series: list = field(default_factory=list)       # (t, cwnd, ssthresh)
    channel_series: list = field(default_factory=list)    # (t, mcs, rate)
    proxy_events: list = field(default_factory=list)      # (t, event, mcs, cwnd)
    duration: int = 0
    # packet accounting (data packets only)
    packets_sent: int = 0
    packets_delivered: int = 0
    dropped_at_queue: int = 0
    dropped_by_channel: int = 0
    in_flight_at_end: int = 0
    retransmissions: int = 0
    rto_count: int = 0
    fast_retransmits: int = 0
    max_backlog: int = 0

    def add_rtt(self, t: int, rtt: int) -> None:
        self.rtt_times.append(t)
        self.rtt_values.append(rtt)

    def add_delivered(self, t: int, nbytes: int) -> None:
        self.delivered_bytes += nbytes
        k = t // self.throughput_window
        wb = self.window_bytes
        if k >= len(wb):
            wb.extend([0] * (k + 1 - len(wb)))
        wb[k] += nbytes

    def throughput_series(self) -> list[tuple[int, float]]:
        """(window_start_ns, Mbps) for each complete-or-partial window up to ``duration``."""
        n = max(len(self.window_bytes), -(-self.duration // self.throughput_window))
        out = []
        for k in range(n):
            b = self.window_bytes[k] if k < len(self.window_bytes) else 0
            start = k * self.throughput_window
            span = min(self.throughput_window, self.duration - start) if self.duration else self.throughput_window
            out.append((start, b * 8 / (span / NS_PER_S) / 1e6 if span > 0 else 0.0))
        return out

    def avg_throughput_mbps(self) -> float:
        if self.duration <= 0:
            return 0.0
        return self.delivered_bytes * 8 / (self.duration / NS_PER_S) / 1e6

    def rtt_percentile_ms(self, p: float) -> float:
        return percentile(self.rtt_values, p) / 1e6

    def conservation_holds(self) -> bool:
        return self.packets_sent == (self.packets_delivered + self.dropped_at_queue
                                     + self.dropped_by_channel + self.in_flight_at_end)

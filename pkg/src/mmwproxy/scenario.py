"""Wires sender, wired hop, AP queue, 60 GHz hop, receiver and proxy into
one simulation instance.

    sender --wired (R_w, 20 ms)--> AP [pfifo] --wireless (R(t))--> receiver
       ^                                                              |
       +-------------------- ACK (wired, 20 ms) <---------------------+
"""

from __future__ import annotations

import dataclasses
import random
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelTrace, generate_synthetic_trace, load_trace
from .config import ScenarioConfig
from .engine import Simulator, seconds_to_ns
from .net import FifoQueue, FlowMetrics, Packet, WiredLink, serialization_ns
from .phy import LinkAbstractionConfig, LinkState, update_link
from .proxy import Policy, Proxy, ProxyConfig, emit_report_if_bdp_changed
from .transport import TcpReceiver, TcpSender, TransportConfig


def run_seeds(seed: int) -> tuple[int, int]:
    """Independent (trace jitter, channel loss) seeds derived from a run seed."""
    a, b = np.random.SeedSequence([int(seed), 0x6D6D]).generate_state(2)
    return int(a), int(b)


def build_trace(cfg: ScenarioConfig, seed: int) -> ChannelTrace:
    path = cfg.trace_path()
    if path is not None:
        return load_trace(path)
    spec = cfg.synthetic_spec()
    if cfg.trace.vary_with_seed:
        mixed = int(np.random.SeedSequence([spec.seed, int(seed)]).generate_state(1)[0])
        spec = dataclasses.replace(spec, seed=mixed)
    return generate_synthetic_trace(spec)


def link_schedule(trace: ChannelTrace, link_cfg: LinkAbstractionConfig, interval_ns: int,
                  t_end: int, interpolation: str = "db") -> list[LinkState]:
    """Link state at every channel tick in ``[0, t_end]``."""
    return [update_link(trace, t, link_cfg, interpolation)
            for t in range(0, t_end + 1, interval_ns)]


class AccessPoint:
    """pfifo queue feeding a rate-varying wireless transmitter with Bernoulli block loss."""

    def __init__(self, sim: Simulator, queue: FifoQueue, deliver, loss_rng: random.Random,
                 metrics: FlowMetrics, wireless_delay: int = 0):
        self.sim = sim
        self.queue = queue
        self.deliver = deliver
        self.rng = loss_rng
        self.metrics = metrics
        self.wireless_delay = wireless_delay
        self.rate_bps = 0
        self.bler = 1.0
        self.busy = False
        self.in_propagation = 0
        self._ser: dict[int, int] = {}

    def set_link(self, link: LinkState) -> None:
        if link.rate_bps != self.rate_bps:
            self._ser = {}
        self.rate_bps = link.rate_bps
        self.bler = link.bler if link.rate_bps else 1.0
        if not self.busy:
            self._start()

    def on_arrival(self, p: Packet) -> None:
        self.queue.enqueue(p)
        if not self.busy:
            self._start()

    def _start(self) -> None:
        if self.rate_bps == 0 or not self.queue.backlog:
            return
        p = self.queue.backlog.popleft()
        ser = self._ser.get(p.size_bytes)
        if ser is None:
            ser = self._ser[p.size_bytes] = serialization_ns(p.size_bytes, self.rate_bps)
        self.busy = True
        self.sim.schedule(self.sim.now + ser, self._done, p, self.bler)

    def _done(self, p: Packet, bler: float) -> None:
        self.busy = False
        if bler > 0.0 and self.rng.random() < bler:
            self.metrics.dropped_by_channel += 1
        elif self.wireless_delay:
            self.in_propagation += 1
            self.sim.schedule(self.sim.now + self.wireless_delay, self._land, p)
        else:
            self.deliver(p)
        self._start()

    def _land(self, p: Packet) -> None:
        self.in_propagation -= 1
        self.deliver(p)


class Scenario:
    """One (policy, seed) simulation instance."""

    def __init__(self, policy, trace: ChannelTrace, link_cfg: LinkAbstractionConfig,
                 transport: TransportConfig = None, proxy: ProxyConfig = None,
                 wired_rate_bps: float = 10e9, one_way_delay: float = 0.020,
                 queue_capacity_packets: int = 500, wireless_delay: float = 0.0,
                 uplink_delay: float = 0.0, update_interval: float = 0.01,
                 interpolation: str = "db", loss_seed: int = 0,
                 links: Optional[Sequence[LinkState]] = None, log_events: bool = False,
                 traffic: bool = True):
        self.policy = Policy.parse(policy)
        self.sim = sim = Simulator(log_events=log_events)
        self.metrics = m = FlowMetrics()
        self.trace = trace
        self.link_cfg = link_cfg
        self.transport_cfg = tcfg = transport or TransportConfig()
        pcfg = dataclasses.replace(proxy or ProxyConfig(), policy=self.policy)
        self.interpolation = interpolation
        self.interval_ns = seconds_to_ns(update_interval)
        self.links = links
        self._tick_index = 0
        self.traffic = traffic

        delay_ns = seconds_to_ns(one_way_delay)
        self.queue = FifoQueue(queue_capacity_packets)
        self.receiver = TcpReceiver(tcfg.mss_bytes, tcfg.ack_bytes, m.add_delivered)
        self.ack_link = WiredLink(sim, int(wired_rate_bps), delay_ns, self._ack_arrives)
        self.uplink_ns = seconds_to_ns(uplink_delay)
        self.ap = AccessPoint(sim, self.queue, self._data_arrives, random.Random(loss_seed), m,
                              seconds_to_ns(wireless_delay))
        self.data_link = WiredLink(sim, int(wired_rate_bps), delay_ns, self.ap.on_arrival)
        self.sender = TcpSender(sim, tcfg, self.data_link.send, m, min_rtt_prior=2 * delay_ns)
        self.proxy = Proxy(sim, pcfg, self.sender.set_cwnd_override, link_cfg.mcs_table,
                           link_cfg.bandwidth_hz, tcfg.mss_bytes, 2 * delay_ns, m.proxy_events)
        if self.policy is not Policy.BASELINE:
            self.sender.rtt_listeners.append(self.proxy.on_rtt_sample)
        self.last_reported_rate: Optional[int] = None
        self.current_link: Optional[LinkState] = None

        sim.schedule(0, self._channel_tick)
        if traffic:
            sim.schedule(0, self.sender.start)

    @classmethod
    def from_config(cls, cfg: ScenarioConfig, policy, seed: int, trace: ChannelTrace = None,
                    links=None, log_events: bool = False) -> "Scenario":
        trace = trace if trace is not None else build_trace(cfg, seed)
        topo = cfg.topology
        return cls(policy, trace, cfg.link.build(Path(cfg.base_dir)), cfg.transport, cfg.proxy,
                   wired_rate_bps=topo.wired_rate_bps, one_way_delay=topo.one_way_delay,
                   queue_capacity_packets=topo.queue_capacity_packets,
                   wireless_delay=topo.wireless_delay, uplink_delay=topo.uplink_delay,
                   update_interval=cfg.trace.update_interval,
                   interpolation=cfg.trace.interpolation, loss_seed=run_seeds(seed)[1],
                   links=links, log_events=log_events)

    # -- plumbing ----------------------------------------------------------------

    def _data_arrives(self, p: Packet) -> None:
        m = self.metrics
        m.packets_delivered += 1
        ack = self.receiver.on_data(p, self.sim.now)
        if self.uplink_ns:
            self.sim.schedule(self.sim.now + self.uplink_ns, self.ack_link.send, ack)
        else:
            self.ack_link.send(ack)

    def _ack_arrives(self, p: Packet) -> None:
        self.sender.on_ack(p)

    def _channel_tick(self) -> None:
        sim = self.sim
        now = sim.now
        if self.links is not None and self._tick_index < len(self.links):
            link = self.links[self._tick_index]
        else:
            link = update_link(self.trace, now, self.link_cfg, self.interpolation)
        self._tick_index += 1
        self.current_link = link
        self.ap.set_link(link)
        m = self.metrics
        m.channel_series.append((now, link.mcs_index, link.rate_bps))
        s = self.sender
        m.cwnd_series.append((now, int(s.cwnd), s.ssthresh))
        report = emit_report_if_bdp_changed(link, self.last_reported_rate)
        if report is not None:
            self.last_reported_rate = report.rate_bps
            self.proxy.deliver_report(report)
        sim.schedule(now + self.interval_ns, self._channel_tick)

    # -- running -------------------------------------------------------------------

    def run_until(self, t_end: int) -> FlowMetrics:
        self.sim.run_until(t_end)
        m = self.metrics
        m.duration = t_end
        m.dropped_at_queue = self.queue.drop_count
        m.max_backlog = self.queue.max_backlog
        m.in_flight_at_end = (self.data_link.in_transit + len(self.queue)
                              + (1 if self.ap.busy else 0) + self.ap.in_propagation)
        return m

"""Deterministic discrete-event engine with integer-nanosecond time."""

from __future__ import annotations

import heapq
from typing import Any, Callable, NamedTuple, Optional

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000


def seconds_to_ns(s: float) -> int:
    return int(round(s * NS_PER_S))


class Event(NamedTuple):
    fire_time: int
    sequence_id: int
    action: Callable[..., Any]
    args: tuple = ()


class Simulator:
    """Event heap ordered by ``(fire_time, sequence_id)``.

    With ``log_events=True`` every dispatch is appended to :attr:`event_log`
    as ``"<time_ns> <seq> <action>"`` for replay diffing.
    """

    def __init__(self, log_events: bool = False):
        self.now = 0
        self._heap: list[Event] = []
        self._seq = 0
        self.dispatched = 0
        self.event_log: Optional[list[str]] = [] if log_events else None

    def schedule(self, fire_time: int, action: Callable[..., Any], *args) -> Event:
        if fire_time < self.now:
            raise AssertionError(
                f"event scheduled in the past: {fire_time} < now {self.now} ({_name(action)})")
        ev = Event(fire_time, self._seq, action, args)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def schedule_in(self, delay: int, action: Callable[..., Any], *args) -> Event:
        return self.schedule(self.now + delay, action, *args)

    def pending(self) -> int:
        return len(self._heap)

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with ``fire_time <= t_end``; returns the count."""
        heap = self._heap
        pop = heapq.heappop
        n = 0
        log = self.event_log
        if log is None:
            while heap and heap[0][0] <= t_end:
                t, _, action, args = pop(heap)
                self.now = t
                action(*args)
                n += 1
        else:
            while heap and heap[0][0] <= t_end:
                t, seq, action, args = pop(heap)
                self.now = t
                log.append(f"{t} {seq} {_name(action)}")
                action(*args)
                n += 1
        if t_end > self.now:
            self.now = t_end
        self.dispatched += n
        return n


def _name(action) -> str:
    return getattr(action, "__qualname__", None) or repr(action)

"""Deterministic discrete-event engine with an integer nanosecond clock."""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Callable, Optional

# All timestamps are integer nanoseconds since simulation start.  An integer
# clock keeps "these two receptions end at the same instant" an exact,
# platform-independent statement, which the concurrent-delivery batching
# relies on.
SimTime = int

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


def us(value: float) -> SimTime:
    """Microseconds to integer nanoseconds (rounded)."""
    return round(value * NS_PER_US)


def seconds(value: float) -> SimTime:
    """Seconds to integer nanoseconds (rounded)."""
    return round(value * NS_PER_S)


class EventKind(IntEnum):
    TX_END = 0
    RX_BEGIN = 1
    RX_END = 2
    BACKOFF_EXPIRED = 3
    DEFER_EXPIRED = 4
    FRAME_TIMEOUT = 5
    SOURCE_GENERATE = 6
    STAT_SAMPLE = 7
    NAV_EXPIRED = 8
    RESPONSE_DUE = 9
    CONTEND_RETRY = 10
    WATCH_EXPIRED = 11
    RX_DELIVER = 12


@dataclass
class Event:
    """A scheduled callback; (fire_at, seq) totally orders the queue."""

    fire_at: SimTime
    seq: int
    kind: EventKind
    callback: Callable[["Event"], None]
    node: Optional[int] = None
    port: Optional[int] = None
    payload: Any = None
    cancelled: bool = field(default=False, compare=False)
    dispatched: bool = field(default=False, compare=False)

    def __lt__(self, other: "Event") -> bool:
        return (self.fire_at, self.seq) < (other.fire_at, other.seq)


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled in the past (a simulator bug)."""


class Kernel:
    """Single-threaded event loop: ordered queue, clock, seeded RNG streams."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.now: SimTime = 0
        self._queue: list[Event] = []
        self._next_seq = 0
        self.dispatched_count = 0
        self.cancelled_count = 0
        self._rngs: dict[int, random.Random] = {}

    def schedule(
        self,
        fire_at: SimTime,
        kind: EventKind,
        callback: Callable[[Event], None],
        node: Optional[int] = None,
        port: Optional[int] = None,
        payload: Any = None,
    ) -> Event:
        """Enqueue an event; the returned handle permits later cancellation."""
        if fire_at < self.now:
            raise SchedulingError(
                f"event {kind.name} scheduled at {fire_at} ns, before now={self.now} ns"
            )
        ev = Event(fire_at, self._next_seq, kind, callback, node, port, payload)
        self._next_seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def schedule_in(self, delay: SimTime, kind: EventKind, callback, **kw) -> Event:
        return self.schedule(self.now + delay, kind, callback, **kw)

    def cancel(self, ev: Optional[Event]) -> bool:
        """True iff the event was pending and is now removed from play."""
        if ev is None or ev.cancelled or ev.dispatched:
            return False
        ev.cancelled = True
        self.cancelled_count += 1
        return True

    def run_until(self, end: SimTime) -> int:
        """Dispatch events in (fire_at, seq) order; the clock never exceeds end."""
        dispatched = 0
        while self._queue:
            ev = self._queue[0]
            if ev.cancelled:
                heapq.heappop(self._queue)
                continue
            if ev.fire_at > end:
                break
            heapq.heappop(self._queue)
            self.now = ev.fire_at
            ev.dispatched = True
            ev.callback(ev)
            dispatched += 1
        self.dispatched_count += dispatched
        return dispatched

    def pending_count(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def rng_for(self, node_id: int) -> random.Random:
        """Per-node stream derived from (global seed, node id).

        Adding a node never perturbs the draws seen by other nodes.
        """
        rng = self._rngs.get(node_id)
        if rng is None:
            rng = random.Random(f"{self.seed}:{node_id}")
            self._rngs[node_id] = rng
        return rng

"""Deterministic discrete-event scheduler and keyed random streams."""

from __future__ import annotations

import hashlib
import heapq
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

logger = logging.getLogger(__name__)

# Simulation time is an integer count of nanoseconds since start.
SimTime = int

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_SEC = 1_000_000_000
NS_PER_MIN = 60 * NS_PER_SEC

DEFAULT_MAX_EVENTS_PER_INSTANT = 1_000_000


def seconds(value: float) -> SimTime:
    """Convert seconds to integer nanoseconds."""
    return round(value * NS_PER_SEC)


def milliseconds(value: float) -> SimTime:
    """Convert milliseconds to integer nanoseconds."""
    return round(value * NS_PER_MS)


class PastEventError(ValueError):
    """Raised when an event is scheduled before the current clock."""


class ZeroBoundError(ValueError):
    """Raised when a random draw is requested with an empty range."""


class InstantOverflowError(RuntimeError):
    """Raised when too many events fire at a single instant (zero-delay loop)."""


class EventKind(str, Enum):
    """What an event does when it fires."""

    FRAME_DELIVERY = "frame-delivery"
    AGENT_WAKEUP = "agent-wakeup"
    TIMER = "timer"


@dataclass(slots=True)
class Event:
    """A scheduled action. Ordered by (fire_time, sequence)."""

    fire_time: SimTime
    sequence: int
    action: Callable[[], None] = field(repr=False)
    kind: EventKind = EventKind.TIMER
    note: str = ""
    cancelled: bool = False

    @property
    def event_id(self) -> int:
        return self.sequence

    def __lt__(self, other: Event) -> bool:
        return (self.fire_time, self.sequence) < (other.fire_time, other.sequence)


@dataclass(frozen=True, slots=True)
class TraceEntry:
    """One processed event, as recorded for determinism checks."""

    fire_time: SimTime
    sequence: int
    kind: str
    note: str


class Scheduler:
    """Single-threaded event queue on a virtual nanosecond clock."""

    def __init__(
        self,
        *,
        record_trace: bool = False,
        max_events_per_instant: int = DEFAULT_MAX_EVENTS_PER_INSTANT,
    ):
        self.now: SimTime = 0
        self._queue: list[Event] = []
        self._next_sequence = 0
        self._max_per_instant = max_events_per_instant
        self.processed = 0
        self.trace: list[TraceEntry] | None = [] if record_trace else None

    def __len__(self) -> int:
        return sum(1 for event in self._queue if not event.cancelled)

    def schedule(
        self,
        at: SimTime,
        action: Callable[[], None],
        *,
        kind: EventKind = EventKind.TIMER,
        note: str = "",
    ) -> Event:
        """Enqueue ``action`` to fire at absolute time ``at``.

        Events with equal fire time run in the order they were scheduled.

        Raises:
            PastEventError: If ``at`` lies before the current clock
        """
        if at < self.now:
            raise PastEventError(f"cannot schedule at {at} ns, clock is at {self.now} ns")
        event = Event(at, self._next_sequence, action, kind, note)
        self._next_sequence += 1
        heapq.heappush(self._queue, event)
        return event

    def schedule_in(
        self,
        delay: SimTime,
        action: Callable[[], None],
        *,
        kind: EventKind = EventKind.TIMER,
        note: str = "",
    ) -> Event:
        """Enqueue ``action`` to fire ``delay`` nanoseconds from now."""
        return self.schedule(self.now + delay, action, kind=kind, note=note)

    @staticmethod
    def cancel(event: Event | None) -> None:
        """Cancel a pending event. Cancelled events are skipped and not counted."""
        if event is not None:
            event.cancelled = True

    def peek_time(self) -> SimTime | None:
        """Fire time of the next live event, if any."""
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].fire_time if self._queue else None

    def run_until(self, end: SimTime) -> int:
        """Process every event with fire time <= ``end`` and advance the clock to ``end``.

        Handlers may schedule more events, including at the current instant;
        those run in this pass after everything already queued for that instant.

        Returns:
            Number of events processed in this call
        """
        count = 0
        instant = -1
        at_instant = 0
        queue = self._queue
        while queue and queue[0].fire_time <= end:
            event = heapq.heappop(queue)
            if event.cancelled:
                continue
            if event.fire_time != instant:
                instant = event.fire_time
                at_instant = 0
            at_instant += 1
            if at_instant > self._max_per_instant:
                raise InstantOverflowError(
                    f"more than {self._max_per_instant} events fired at t={instant} ns "
                    f"(last: {event.note or event.kind.value})"
                )
            self.now = event.fire_time
            if self.trace is not None:
                self.trace.append(
                    TraceEntry(event.fire_time, event.sequence, event.kind.value, event.note)
                )
            event.action()
            count += 1
        if end > self.now:
            self.now = end
        self.processed += count
        return count


def _stream_key(seed: int, stream_key: str) -> int:
    """Derive a 128-bit Philox key from the run seed and a stream name."""
    digest = hashlib.blake2b(
        f"{seed}:{stream_key}".encode(), digest_size=16, person=b"nidsim-rng"
    ).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Counter-based random stream keyed by (seed, stream_key).

    Draws depend only on the seed, the key and how many draws came before, so
    streams with different keys never influence one another.
    """

    def __init__(self, seed: int, stream_key: str):
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.stream_key = stream_key
        self.draws = 0
        self._generator = np.random.Generator(np.random.Philox(key=_stream_key(seed, stream_key)))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.stream_key!r}, draws={self.draws})"

    def draw(self, bound: int) -> int:
        """Uniform integer in [0, bound)."""
        if bound <= 0:
            raise ZeroBoundError(f"bound must be >= 1, got {bound}")
        self.draws += 1
        return int(self._generator.integers(0, bound))

    def uniform(self) -> float:
        """Uniform float in [0, 1)."""
        self.draws += 1
        return float(self._generator.random())

    def exponential_ns(self, mean: SimTime) -> SimTime:
        """Exponentially distributed interval with the given mean, at least 1 ns."""
        self.draws += 1
        return max(1, round(float(self._generator.exponential(mean))))

    def bytes(self, length: int) -> bytes:
        """``length`` uniformly random bytes."""
        self.draws += 1
        return self._generator.bytes(length)

    def child(self, suffix: str) -> RngStream:
        """Independent stream derived from this one's key."""
        return RngStream(self.seed, f"{self.stream_key}/{suffix}")


def rng_draw(stream: RngStream, bound: int) -> int:
    """Draw a uniform integer in [0, bound) from ``stream``.

    Raises:
        ZeroBoundError: If ``bound`` is zero
    """
    return stream.draw(bound)

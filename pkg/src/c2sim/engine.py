"""Deterministic discrete-event core: integer-millisecond virtual clock,
an ordered event queue, and named reproducible random streams.

Determinism rules enforced here:
  * virtual time is integer milliseconds, never floats;
  * ties at the same timestamp dispatch in scheduling order (global sequence);
  * every random draw comes from a named stream seeded by (seed, stream_id),
    so adding draws to one entity never shifts another entity's sequence;
  * distributions are built by inverse transform on Random.random() alone,
    the one generator method with a cross-version stability guarantee.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import math
import random
import re
from dataclasses import dataclass, field
from typing import Callable

SimTime = int  # milliseconds of virtual time since scenario start

EVENT_KINDS = frozenset({
    "agent-checkin",
    "task-issued",
    "task-complete",
    "intel-submitted",
    "planner-turn",
    "chaff-emit",
    "background-emit",
    "heartbeat-deadline",
})


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class ParameterError(ValueError):
    """Raised for invalid distribution names or parameters."""


@dataclass(frozen=True, order=True)
class SimEvent:
    """One scheduled occurrence. Ordering is (time, seq) and nothing else."""

    time: SimTime
    seq: int
    entity: str = field(compare=False)
    kind: str = field(compare=False)
    payload: object = field(compare=False, default=None)


_DIST_RE = re.compile(r"^\s*([a-z_]+)\s*\(([^)]*)\)\s*$")


@dataclass(frozen=True)
class Dist:
    """A parsed distribution spec such as lognormal(10.5, 0.8)."""

    name: str
    params: tuple[float, ...]

    @classmethod
    def parse(cls, text: str) -> "Dist":
        m = _DIST_RE.match(text)
        if not m:
            raise ParameterError(f"unparseable distribution {text!r}")
        name = m.group(1)
        raw = m.group(2).strip()
        try:
            params = tuple(float(p) for p in raw.split(",")) if raw else ()
        except ValueError as exc:
            raise ParameterError(f"bad numeric parameter in {text!r}") from exc
        dist = cls(name, params)
        dist.validate()
        return dist

    def validate(self) -> None:
        n, p = self.name, self.params
        if n == "uniform":
            if len(p) != 2 or p[0] > p[1]:
                raise ParameterError(f"uniform needs (a, b) with a <= b, got {p}")
        elif n == "exponential":
            if len(p) != 1 or p[0] <= 0:
                raise ParameterError(f"exponential needs mean > 0, got {p}")
        elif n == "lognormal":
            if len(p) != 2 or p[1] < 0:
                raise ParameterError(f"lognormal needs (mu, sigma >= 0), got {p}")
        elif n == "choice":
            if not p or any(w < 0 for w in p) or sum(p) == 0:
                raise ParameterError(
                    f"choice needs non-negative weights with a positive sum, got {p}"
                )
        else:
            raise ParameterError(f"unknown distribution {n!r}")

    def __str__(self) -> str:
        inner = ", ".join(format(v, "g") for v in self.params)
        return f"{self.name}({inner})"


class RngStream:
    """One named random stream.

    The underlying generator is seeded from SHA-256 of (seed, stream_id), so
    the same pair yields the same draw sequence on any platform and the
    streams for different ids are statistically independent.
    """

    def __init__(self, seed: int, stream_id: str):
        self.seed = seed
        self.stream_id = stream_id
        digest = hashlib.sha256(f"{seed}/{stream_id}".encode()).digest()
        self._rand = random.Random(int.from_bytes(digest[:8], "big"))

    def unit(self) -> float:
        """Next uniform draw in [0, 1)."""
        return self._rand.random()


def draw(stream: RngStream, dist: Dist) -> float:
    """Sample one value from dist using only stream.unit() draws.

    choice(...) returns a float-valued index; callers int() it.
    """
    dist.validate()
    name, p = dist.name, dist.params
    if name == "uniform":
        a, b = p
        return a + (b - a) * stream.unit()
    if name == "exponential":
        # inverse CDF; 1-u is in (0, 1] so the log argument is never zero
        return -p[0] * math.log(1.0 - stream.unit())
    if name == "lognormal":
        mu, sigma = p
        u1 = 1.0 - stream.unit()
        u2 = stream.unit()
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return math.exp(mu + sigma * z)
    if name == "choice":
        total = sum(p)
        target = stream.unit() * total
        acc = 0.0
        for i, w in enumerate(p):
            acc += w
            if target < acc:
                return float(i)
        return float(len(p) - 1)  # guard for target == total under rounding
    raise ParameterError(f"unknown distribution {name!r}")


class Simulator:
    """Event queue plus clock plus the stream registry for one run."""

    def __init__(self, seed: int):
        self.seed = seed
        self.clock: SimTime = 0
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()
        self._handlers: dict[str, Callable[[SimEvent], None]] = {}
        self._streams: dict[str, RngStream] = {}
        self.emissions: list = []

    # -- random streams ----------------------------------------------------

    def stream(self, stream_id: str) -> RngStream:
        st = self._streams.get(stream_id)
        if st is None:
            st = RngStream(self.seed, stream_id)
            self._streams[stream_id] = st
        return st

    def draw(self, stream_id: str, dist: Dist) -> float:
        return draw(self.stream(stream_id), dist)

    # -- event queue -------------------------------------------------------

    def on(self, kind: str, handler: Callable[[SimEvent], None]) -> None:
        if kind not in EVENT_KINDS:
            raise ParameterError(f"unknown event kind {kind!r}")
        self._handlers[kind] = handler

    def schedule(self, time: SimTime, entity: str, kind: str, payload=None) -> SimEvent:
        """Queue an event; returns it as the acknowledgment."""
        if kind not in EVENT_KINDS:
            raise ParameterError(f"unknown event kind {kind!r}")
        if time < self.clock:
            raise SchedulingError(
                f"cannot schedule {kind} for {entity} at t={time}; clock is {self.clock}"
            )
        ev = SimEvent(time=int(time), seq=next(self._seq), entity=entity,
                      kind=kind, payload=payload)
        heapq.heappush(self._queue, ev)
        return ev

    def emit(self, record) -> None:
        """Append a record to the emission log at the current clock."""
        self.emissions.append(record)

    def next_event_time(self) -> SimTime | None:
        return self._queue[0].time if self._queue else None

    def run_until(self, t_end: SimTime) -> list:
        """Dispatch every event with time <= t_end in order; clock ends at t_end.

        A handler that schedules into the past aborts the run by raising
        SchedulingError with the offending event named.
        """
        if t_end < self.clock:
            raise SchedulingError(f"run_until({t_end}) is before clock {self.clock}")
        while self._queue and self._queue[0].time <= t_end:
            ev = heapq.heappop(self._queue)
            self.clock = ev.time
            handler = self._handlers.get(ev.kind)
            if handler is not None:
                handler(ev)
        self.clock = t_end
        return self.emissions

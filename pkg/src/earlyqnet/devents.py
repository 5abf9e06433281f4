"""Deterministic discrete-event engine with keyed random streams."""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable

import numpy as np

from earlyqnet.linkmodel import C_FIBER_KM_S


@dataclass(order=True)
class Event:
    time: float
    sequence: int
    action: Callable[[], Any] = field(compare=False)
    label: str = field(default="", compare=False)
    cancelled: bool = field(default=False, compare=False)

    def cancel(self) -> None:
        self.cancelled = True


@dataclass(frozen=True)
class ClassicalMessage:
    source: Hashable
    destination: Hashable
    payload: Any
    send_time: float
    delay: float


def stream_key(*parts: Hashable) -> int:
    """Stable 64-bit integer for a tuple key (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Simulator:
    """Single-threaded event loop.

    Events run in ``(time, sequence)`` order; ``sequence`` is the insertion
    counter, so simultaneous events run first-scheduled-first. ``distance``
    maps ``(src, dst)`` to kilometres for classical messaging and should
    raise ``KeyError`` for unknown endpoints.
    """

    def __init__(
        self,
        seed: int = 0,
        distance: Callable[[Hashable, Hashable], float] | None = None,
        c_fiber: float = C_FIBER_KM_S,
        trace: bool = False,
    ):
        self.now = 0.0
        self.seed = seed
        self.c_fiber = c_fiber
        self._distance = distance
        self._queue: list[Event] = []
        self._seq = 0
        self._streams: dict[tuple, np.random.Generator] = {}
        self._stopped = False
        self.tracing = trace
        self.trace: list[tuple[float, str]] = []
        self.executed = 0

    def schedule(self, time: float, action: Callable[[], Any], label: str = "") -> Event:
        if time < self.now or math.isnan(time):
            raise ValueError(f"cannot schedule at t={time} before now={self.now}")
        ev = Event(time, self._seq, action, label)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def schedule_in(self, delay: float, action: Callable[[], Any], label: str = "") -> Event:
        return self.schedule(self.now + delay, action, label)

    def stop(self) -> None:
        """Make ``run_until`` return after the current event."""
        self._stopped = True

    def pending(self) -> int:
        return sum(not e.cancelled for e in self._queue)

    def run_until(self, deadline: float = math.inf) -> float:
        self._stopped = False
        while self._queue and not self._stopped:
            if self._queue[0].time > deadline:
                break
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now = ev.time
            if self.tracing:
                self.trace.append((ev.time, ev.label))
            self.executed += 1
            ev.action()
        return self.now

    def rng(self, *key: Hashable) -> np.random.Generator:
        """Random stream derived from the root seed and ``key``.

        The same key always returns the same generator object, and streams
        for distinct keys are independent of each other and of call order.
        """
        if key not in self._streams:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(stream_key(*key),))
            self._streams[key] = np.random.Generator(np.random.PCG64(ss))
        return self._streams[key]

    def classical_delay(self, source: Hashable, destination: Hashable) -> float:
        if source == destination:
            return 0.0
        if self._distance is None:
            raise ValueError("simulator has no classical distance model")
        try:
            km = self._distance(source, destination)
        except KeyError as exc:
            raise ValueError(f"unknown classical endpoint: {exc}") from None
        return km / self.c_fiber

    def send_classical(
        self,
        source: Hashable,
        destination: Hashable,
        payload: Any,
        on_deliver: Callable[[ClassicalMessage], Any],
    ) -> ClassicalMessage:
        delay = self.classical_delay(source, destination)
        msg = ClassicalMessage(source, destination, payload, self.now, delay)
        self.schedule(self.now + delay, lambda: on_deliver(msg), f"deliver {source}->{destination}")
        return msg

"""Discrete-event clock."""

from __future__ import annotations

import heapq
import itertools
from typing import Callable


class SimClock:
    """Dispatches callbacks in (time, insertion order) sequence."""

    def __init__(self):
        self.current_time = 0
        self._queue: list[tuple[int, int, Callable, tuple]] = []
        self._counter = itertools.count()

    def schedule(self, delay: int, fn: Callable, *args) -> None:
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._queue, (self.current_time + delay, next(self._counter), fn, args))

    def at(self, time: int, fn: Callable, *args) -> None:
        self.schedule(time - self.current_time, fn, *args)

    def pending(self) -> int:
        return len(self._queue)

    def run(self, until: int | None = None) -> None:
        while self._queue:
            when = self._queue[0][0]
            if until is not None and when > until:
                break
            when, _, fn, args = heapq.heappop(self._queue)
            self.current_time = when
            fn(*args)
        if until is not None:
            self.current_time = max(self.current_time, until)

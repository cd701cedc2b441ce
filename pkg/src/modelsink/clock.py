"""Injectable millisecond clocks: monotonic wall clock for deployment, stepped clock for tests and simulation."""

from __future__ import annotations

import time


class SystemClock:
    """Monotonic milliseconds since first use; safe for interval arithmetic, not wall-time display."""

    def __init__(self):
        self._origin = time.monotonic()

    def now_ms(self) -> int:
        return int((time.monotonic() - self._origin) * 1000)

    def sleep_ms(self, ms: int) -> None:
        time.sleep(ms / 1000.0)


class SimClock:
    """Manually advanced clock for deterministic tests and simulated runs."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms

    def now_ms(self) -> int:
        return self._now

    def advance(self, ms: int) -> None:
        if ms < 0:
            raise ValueError("clock cannot go backwards")
        self._now += ms

    def set(self, now_ms: int) -> None:
        if now_ms < self._now:
            raise ValueError("clock cannot go backwards")
        self._now = now_ms

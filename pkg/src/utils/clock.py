"""
Clock abstraction shared by every timing-sensitive component.

Production wiring uses MonotonicClock; tests drive SimulatedClock so
cooldowns, grace periods and backoff delays run instantly and exactly.
"""

import asyncio
import time
from typing import Protocol


class Clock(Protocol):
    """Monotonic time source."""

    def now(self) -> float:
        """Seconds on a monotonic scale."""

    def now_ns(self) -> int:
        """Nanoseconds on the same monotonic scale."""

    async def sleep(self, seconds: float) -> None:
        """Wait for `seconds` of this clock's time."""


class MonotonicClock:
    """Wall-independent monotonic clock (CLOCK_MONOTONIC)."""

    def now(self) -> float:
        return time.monotonic()

    def now_ns(self) -> int:
        return time.monotonic_ns()

    async def sleep(self, seconds: float) -> None:
        await asyncio.sleep(max(0.0, seconds))


class SimulatedClock:
    """
    Manually advanced clock.

    sleep() advances the clock instead of waiting, so a coroutine that
    polls with clock.sleep() runs to completion deterministically.
    """

    def __init__(self, start: float = 1000.0):
        """
        Initialize simulated clock.

        Args:
            start: Initial reading in seconds
        """
        self._now_ns = int(start * 1_000_000_000)

    def now(self) -> float:
        return self._now_ns / 1_000_000_000

    def now_ns(self) -> int:
        return self._now_ns

    def advance(self, seconds: float) -> None:
        """Move time forward by `seconds`."""
        if seconds < 0:
            raise ValueError("SimulatedClock cannot go backwards")
        self._now_ns += int(round(seconds * 1_000_000_000))

    async def sleep(self, seconds: float) -> None:
        self.advance(max(0.0, seconds))
        await asyncio.sleep(0)


monotonic_clock = MonotonicClock()

"""
Restart rate limiting utilities.
"""

from collections import deque
from typing import Deque, Optional


class ExponentialBackoff:
    """
    Exponential backoff schedule.
    """

    def __init__(self, base: float, max_attempts: int):
        """
        Initialize backoff schedule.

        Args:
            base: Delay before the first retry, in seconds
            max_attempts: Retries allowed before giving up
        """
        self.base = base
        self.max_attempts = max_attempts

    def delay(self, attempt: int) -> float:
        """
        Delay before retry number `attempt` (1-based).

        Args:
            attempt: Retry number

        Returns:
            base * 2^(attempt - 1) seconds
        """
        if attempt < 1:
            raise ValueError("attempt numbers start at 1")
        return self.base * (2 ** (attempt - 1))

    def allows(self, attempt: int) -> bool:
        """True if retry number `attempt` is within the budget."""
        return 1 <= attempt <= self.max_attempts


class CrashWindow:
    """
    Crash counter for one supervised device.

    The count resets once `window_seconds` pass without a crash, and on
    explicit reset (device detached). Crash timestamps inside the current
    window are kept for status reporting.
    """

    def __init__(self, window_seconds: float):
        """
        Initialize crash window.

        Args:
            window_seconds: Crash-free time after which the count resets
        """
        self.window_seconds = window_seconds
        self.crashes: Deque[float] = deque()
        self.last_crash: Optional[float] = None

    @property
    def count(self) -> int:
        """Crashes counted since the last reset."""
        return len(self.crashes)

    def record(self, now: float) -> int:
        """
        Count a crash at time `now`.

        Args:
            now: Clock reading in seconds

        Returns:
            Crash count including this one
        """
        self.expire(now)
        self.crashes.append(now)
        self.last_crash = now
        return len(self.crashes)

    def expire(self, now: float) -> bool:
        """
        Reset the count if the window passed crash-free.

        Args:
            now: Clock reading in seconds

        Returns:
            bool: True if a reset happened
        """
        if self.last_crash is not None and now - self.last_crash >= self.window_seconds:
            self.reset()
            return True
        return False

    def reset(self) -> None:
        """Forget all crashes."""
        self.crashes.clear()
        self.last_crash = None

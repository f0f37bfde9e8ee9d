"""
Helper utilities for common operations.
"""

from datetime import datetime, timezone


def utc_now() -> datetime:
    """
    Get current UTC datetime with timezone info.

    Returns:
        UTC datetime
    """
    return datetime.now(timezone.utc)


def isoformat_z(moment: datetime) -> str:
    """
    Format a datetime as ISO-8601 UTC with "Z" suffix, seconds precision.

    Args:
        moment: Datetime (naive values are taken as UTC)

    Returns:
        Text such as "2026-02-05T10:30:00Z"
    """
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def popcount(word: int) -> int:
    """Number of set bits in a non-negative integer."""
    return bin(word).count("1")


def low_bits(count: int) -> int:
    """Word with the lowest `count` bits set."""
    return (1 << count) - 1 if count > 0 else 0


def format_bytes(bytes_value: float) -> str:
    """
    Format bytes into human readable string.

    Args:
        bytes_value: Number of bytes

    Returns:
        Formatted string (e.g., "1.2 MB")
    """
    for unit in ["B", "KB", "MB", "GB", "TB"]:
        if bytes_value < 1024.0:
            return f"{bytes_value:.1f} {unit}"
        bytes_value /= 1024.0
    return f"{bytes_value:.1f} PB"


def ns_to_seconds(value_ns: int) -> float:
    """Nanoseconds to float seconds."""
    return value_ns / 1_000_000_000

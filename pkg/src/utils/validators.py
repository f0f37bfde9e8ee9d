"""
Validation utilities for device identities, topics and endpoints.
"""

import re
from typing import List, Tuple

_HEX_ID = re.compile(r"^(?:0[xX])?([0-9a-fA-F]{1,4})$")
_DEVICE_NAME = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_\-]*$")


def parse_hex_id(text: str) -> int:
    """
    Parse a 16-bit USB vendor/product id.

    Accepts "0x1234", "0X1234" and bare "1234", case-insensitively.

    Args:
        text: Hex text

    Returns:
        int: Parsed id

    Raises:
        ValueError: If text is not a 1-4 digit hex number
    """
    match = _HEX_ID.match(str(text).strip())
    if not match:
        raise ValueError(f"Invalid 16-bit hex id: {text!r}")
    return int(match.group(1), 16)


def format_hex_id(value: int) -> str:
    """Canonical "0x1234" form used in registry files and logs."""
    return f"0x{value:04x}"


def is_valid_device_name(name: str) -> bool:
    """
    Check a registry device name (the part after "device.").

    Args:
        name: Device name

    Returns:
        bool: True if usable as a symlink and topic component
    """
    return bool(_DEVICE_NAME.match(name or ""))


def is_valid_topic(topic: str) -> bool:
    """
    Check a topic path.

    Topics are absolute ("/rapid/tactile/left"), non-empty and free of
    whitespace. Names starting with "=" are reserved for control frames.

    Args:
        topic: Topic path

    Returns:
        bool: True if valid
    """
    if not topic or not topic.startswith("/"):
        return False
    return not any(ch.isspace() for ch in topic)


def validate_shape(shape: List[int]) -> Tuple[int, ...]:
    """
    Validate declared payload dimensions.

    Args:
        shape: List of dimensions

    Returns:
        Tuple of dimensions

    Raises:
        ValueError: If any dimension is not a positive integer
    """
    dims = tuple(shape)
    if not dims:
        raise ValueError("shape must have at least one dimension")
    for dim in dims:
        if isinstance(dim, bool) or not isinstance(dim, int) or dim <= 0:
            raise ValueError(f"shape dimensions must be positive integers, got {shape!r}")
    return dims


def parse_endpoint(endpoint: str) -> Tuple[str, int]:
    """
    Split "host:port" into its parts.

    Args:
        endpoint: Endpoint text

    Returns:
        (host, port)

    Raises:
        ValueError: If the port is missing or out of range
    """
    host, sep, port_text = endpoint.rpartition(":")
    if not sep or not host:
        raise ValueError(f"Endpoint must be host:port, got {endpoint!r}")
    try:
        port = int(port_text)
    except ValueError:
        raise ValueError(f"Invalid port in endpoint {endpoint!r}")
    if not 0 <= port <= 65535:
        raise ValueError(f"Port out of range in endpoint {endpoint!r}")
    return host, port

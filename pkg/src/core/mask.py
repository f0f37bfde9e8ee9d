"""
Physical Mask value and its encodings.

Binary record (32 bytes, little-endian):

    offset  size  field
    0       4     magic (0x52415044, "RAPD")
    4       1     version (1)
    5       1     device_count
    6       2     padding (zero)
    8       8     mask (bit i = device with bit i is online)
    16      8     timestamp_ns (monotonic)
    24      8     sequence
"""

import json
import struct
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from src.core.exceptions import (
    BadMagic,
    InvariantViolation,
    RegistryMismatch,
    ShortBuffer,
    UnsupportedVersion,
)
from src.core.registry import Registry
from src.schemas.mask import MaskDebugView, MaskDeviceEntry
from src.utils.helpers import isoformat_z, low_bits, popcount, utc_now

MASK_MAGIC = 0x52415044
MASK_VERSION = 1
MASK_RECORD_SIZE = 32
U64_MAX = (1 << 64) - 1

_LAYOUT = struct.Struct("<IBBHQQQ")
assert _LAYOUT.size == MASK_RECORD_SIZE


class PhysicalMask(BaseModel):
    """One Physical Mask record."""

    model_config = ConfigDict(frozen=True)

    magic: int = Field(MASK_MAGIC, ge=0, le=0xFFFFFFFF)
    version: int = Field(MASK_VERSION, ge=0, le=0xFF)
    device_count: int = Field(0, ge=0, le=0xFF)
    padding: int = Field(0, ge=0, le=0xFFFF)
    mask: int = Field(0, ge=0, le=U64_MAX)
    timestamp_ns: int = Field(0, ge=0, le=U64_MAX)
    sequence: int = Field(0, ge=0, le=U64_MAX)

    def is_set(self, bit: int) -> bool:
        """True if `bit` is set in the mask word."""
        return bool((self.mask >> bit) & 1)

    @property
    def online_count(self) -> int:
        return popcount(self.mask & assigned_bits(self.device_count))


def assigned_bits(device_count: int) -> int:
    """Word with the low `device_count` bits set."""
    return low_bits(min(device_count, 64))


def check_mask(m: PhysicalMask) -> None:
    """
    Check record invariants.

    Raises:
        InvariantViolation: On wrong magic/version, nonzero padding,
            device_count above 64 or a set bit at or above device_count
    """
    if m.magic != MASK_MAGIC:
        raise InvariantViolation(f"magic must be 0x{MASK_MAGIC:08x}, got 0x{m.magic:08x}")
    if m.version != MASK_VERSION:
        raise InvariantViolation(f"only version {MASK_VERSION} is encodable, got {m.version}")
    if m.padding != 0:
        raise InvariantViolation("padding must be zero")
    if m.device_count > 64:
        raise InvariantViolation(f"device_count {m.device_count} exceeds 64")
    if m.mask & ~assigned_bits(m.device_count):
        raise InvariantViolation(
            f"mask 0x{m.mask:x} has bits at or above device_count {m.device_count}"
        )


def encode_mask(m: PhysicalMask) -> bytes:
    """
    Encode a PhysicalMask into its 32-byte record.

    Args:
        m: Mask value

    Returns:
        32 bytes

    Raises:
        InvariantViolation: If `m` breaks record invariants
    """
    check_mask(m)
    return _LAYOUT.pack(
        m.magic, m.version, m.device_count, 0, m.mask, m.timestamp_ns, m.sequence
    )


def decode_mask(data: bytes) -> PhysicalMask:
    """
    Decode a 32-byte record.

    Args:
        data: Record bytes (extra trailing bytes are ignored)

    Returns:
        PhysicalMask

    Raises:
        ShortBuffer: Fewer than 32 bytes
        BadMagic: Magic is not RAPD
        UnsupportedVersion: Version is not 1
    """
    if len(data) < MASK_RECORD_SIZE:
        raise ShortBuffer(f"mask record needs {MASK_RECORD_SIZE} bytes, got {len(data)}")

    magic, version, device_count, padding, mask, timestamp_ns, sequence = _LAYOUT.unpack_from(
        data
    )
    if magic != MASK_MAGIC:
        raise BadMagic(f"bad mask magic 0x{magic:08x}")
    if version != MASK_VERSION:
        raise UnsupportedVersion(f"unsupported mask version {version}")

    return PhysicalMask(
        magic=magic,
        version=version,
        device_count=device_count,
        padding=padding,
        mask=mask,
        timestamp_ns=timestamp_ns,
        sequence=sequence,
    )


def binary_width(device_count: int) -> int:
    """Digits in mask_binary: 8 up to 8 devices, else rounded up to a multiple of 8."""
    if device_count <= 8:
        return 8
    return ((device_count + 7) // 8) * 8


def format_mask_hex(mask: int, device_count: int) -> str:
    """Mask word as "0x.." with two hex digits per byte of mask_binary."""
    return f"0x{mask:0{binary_width(device_count) // 4}x}"


def format_mask_binary(mask: int, device_count: int) -> str:
    """Mask word as binary text, most-significant bit first."""
    return format(mask, f"0{binary_width(device_count)}b")


def build_debug_view(
    m: PhysicalMask, registry: Registry, wall_clock: Optional[str] = None
) -> MaskDebugView:
    """
    Build the debug view of a mask record.

    Args:
        m: Mask value
        registry: Registry whose bit map names the mask bits
        wall_clock: ISO-8601 UTC text; current wall time when omitted

    Returns:
        MaskDebugView

    Raises:
        RegistryMismatch: If m.device_count differs from the registry size
    """
    if m.device_count != len(registry):
        raise RegistryMismatch(
            f"mask reports {m.device_count} devices, registry has {len(registry)}"
        )

    devices = [
        MaskDeviceEntry(name=d.name, bit=d.bit, online=m.is_set(d.bit))
        for d in sorted(registry, key=lambda d: d.bit)
    ]
    return MaskDebugView(
        timestamp=wall_clock if wall_clock is not None else isoformat_z(utc_now()),
        device_count=m.device_count,
        online_count=m.online_count,
        mask=format_mask_hex(m.mask, m.device_count),
        mask_binary=format_mask_binary(m.mask, m.device_count),
        sequence=m.sequence,
        devices=devices,
    )


def render_debug(m: PhysicalMask, registry: Registry, wall_clock: str) -> str:
    """
    Render the debug JSON for a mask record.

    Args:
        m: Mask value
        registry: Registry whose bit map names the mask bits
        wall_clock: ISO-8601 UTC text for the "timestamp" key

    Returns:
        JSON text

    Raises:
        RegistryMismatch: If m.device_count differs from the registry size
    """
    view = build_debug_view(m, registry, wall_clock)
    return json.dumps(view.model_dump(), indent=2) + "\n"

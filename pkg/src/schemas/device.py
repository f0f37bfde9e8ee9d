"""
Pydantic schemas for registered device modules.
"""

from typing import Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.utils.validators import format_hex_id, parse_hex_id

MAX_DEVICES = 64


class DeviceIdentity(BaseModel):
    """USB identity of a physical device."""

    model_config = ConfigDict(frozen=True)

    vid: int = Field(..., ge=0, le=0xFFFF, description="16-bit vendor id")
    pid: int = Field(..., ge=0, le=0xFFFF, description="16-bit product id")
    serial: Optional[str] = Field(None, description="Serial number, absent for model-only ids")

    @field_validator("vid", "pid", mode="before")
    @classmethod
    def parse_hex(cls, v):
        """Accept "0x1234" / "1234" text as well as integers."""
        if isinstance(v, str):
            return parse_hex_id(v)
        return v

    @field_validator("serial", mode="before")
    @classmethod
    def empty_serial_is_absent(cls, v):
        """OS payloads report a missing serial as an empty string."""
        if v is None:
            return None
        v = str(v).strip()
        return v or None

    def __str__(self) -> str:
        serial = self.serial if self.serial is not None else "-"
        return f"{format_hex_id(self.vid)}:{format_hex_id(self.pid)}:{serial}"


class DeviceDescriptor(BaseModel):
    """One registered module: identity, launch commands, topic and mask bit."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(..., min_length=1, description="Unique registry key")
    identity: DeviceIdentity
    on_attach: str = Field(..., min_length=1, description="Command line started on attach")
    on_detach: Optional[str] = Field(None, description="Cleanup command run after termination")
    topic: str = Field(..., min_length=1, description="Data topic path")
    bit: int = Field(..., ge=0, lt=MAX_DEVICES, description="Physical Mask bit")
    shape: Tuple[int, ...] = Field((1,), description="Payload dimensions for zero-fill")
    rate_hz: float = Field(30.0, gt=0, le=1000, description="Nominal publish rate")
    kind: Optional[str] = Field(None, description="Payload kind hint (camera/tactile/motor)")

    @property
    def has_serial(self) -> bool:
        """True for exact-match (instance) descriptors."""
        return self.identity.serial is not None

    @property
    def payload_size(self) -> int:
        """Number of float32 elements in one payload."""
        size = 1
        for dim in self.shape:
            size *= dim
        return size

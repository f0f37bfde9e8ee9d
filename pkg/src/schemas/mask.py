"""
Pydantic schemas for the Physical Mask debug view.
"""

from typing import List
from pydantic import BaseModel, Field


class MaskDeviceEntry(BaseModel):
    """One registered device in the debug view."""

    name: str
    bit: int = Field(..., ge=0, le=63)
    online: bool


class MaskDebugView(BaseModel):
    """Human-readable rendering of one PhysicalMask record."""

    timestamp: str = Field(..., description="UTC wall time, seconds precision, Z suffix")
    device_count: int = Field(..., ge=0, le=64)
    online_count: int = Field(..., ge=0, le=64)
    mask: str = Field(..., description="Mask word as hex, e.g. 0x05")
    mask_binary: str = Field(..., description="Mask word as binary, MSB first")
    sequence: int = Field(..., ge=0)
    devices: List[MaskDeviceEntry] = Field(default_factory=list)

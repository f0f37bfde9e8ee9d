"""
Pydantic schemas for supervisor status reporting.
"""

from enum import Enum
from datetime import datetime
from typing import List, Optional
from pydantic import BaseModel, Field


class DeviceState(str, Enum):
    """Per-device lifecycle state."""

    OFFLINE = "Offline"
    ATTACHED_STARTING = "AttachedStarting"
    ONLINE = "Online"
    BACKOFF = "Backoff"
    DETACHING = "Detaching"


class DeviceStatus(BaseModel):
    """One StatusSnapshot row."""

    name: str
    bit: int = Field(..., ge=0, le=63)
    state: DeviceState
    attached: bool = Field(..., description="Physically present (registered vs. present)")
    restart_count: int = Field(0, ge=0)
    failed: bool = Field(False, description="Backoff budget exhausted")
    pid: Optional[int] = None


class StatusSnapshot(BaseModel):
    """Consistent view of every device plus the mask word it produced."""

    devices: List[DeviceStatus] = Field(default_factory=list)
    mask: int = Field(0, ge=0, description="Presence word")
    device_count: int = Field(0, ge=0, le=64)
    sequence: int = Field(0, ge=0, description="Last published mask sequence")
    recent_log: List[str] = Field(default_factory=list)

    @property
    def mask_hex(self) -> str:
        return f"0x{self.mask:02x}"

    def device(self, name: str) -> Optional[DeviceStatus]:
        """Row by device name."""
        for row in self.devices:
            if row.name == name:
                return row
        return None


class TerminationReport(BaseModel):
    """Outcome of a graceful termination."""

    name: str
    graceful: bool
    duration: float = Field(..., ge=0, description="Seconds from SIGTERM to exit")
    exit_code: Optional[int] = None
    on_detach_ran: bool = False


class DaemonHealth(BaseModel):
    """Health of a running daemon."""

    status: str = Field(..., description="healthy, degraded or unhealthy")
    version: str
    timestamp: datetime
    device_count: int = Field(0, ge=0, le=64)
    online_count: int = Field(0, ge=0, le=64)
    mask_sequence: int = Field(0, ge=0)
    mask_age_ms: Optional[float] = Field(None, description="Age of the last mask record")
    mask_writer: bool = Field(False, description="Mask writer thread alive")

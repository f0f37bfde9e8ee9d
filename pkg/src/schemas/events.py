"""
Pydantic schemas for hot-plug events.
"""

from enum import Enum
from typing import Optional
from pydantic import BaseModel, ConfigDict, Field

from src.schemas.device import DeviceIdentity


class EventKind(str, Enum):
    """Hot-plug event kind."""

    ATTACH = "attach"
    DETACH = "detach"


class HotplugEvent(BaseModel):
    """Device attach/detach notification from an event source."""

    model_config = ConfigDict(frozen=True)

    kind: EventKind
    identity: DeviceIdentity
    device_path: Optional[str] = None
    timestamp_ns: int = Field(..., ge=0, description="Monotonic nanoseconds at emission")
    source: str = Field("inject", description="Emitting source (inject/udev/timeline)")


class EventOutcome(BaseModel):
    """Supervisor's answer to one delivered event."""

    kind: EventKind
    identity: DeviceIdentity
    matched: bool = False
    device: Optional[str] = None
    state: Optional[str] = Field(None, description="Resulting DeviceState value")
    message: str = ""

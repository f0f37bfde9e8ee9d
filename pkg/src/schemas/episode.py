"""
Pydantic schemas for episode manifests and dropout audits.
"""

from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from src.schemas.device import MAX_DEVICES
from src.utils.helpers import ns_to_seconds

MASK_CHANNEL_ID = 0


class ManifestChannel(BaseModel):
    """Channel table entry of an episode manifest."""

    id: int = Field(..., ge=1, le=255)
    name: str
    topic: str
    shape: Tuple[int, ...] = (1,)
    rate_hz: float = 30.0
    bit: int = Field(..., ge=0, lt=MAX_DEVICES)


class EpisodeManifest(BaseModel):
    """Self-describing header of an episode container."""

    format_version: int = 1
    start_wall_time: str
    device_count: int = Field(0, ge=0, le=MAX_DEVICES)
    bit_map: Dict[str, int] = Field(default_factory=dict)
    channels: List[ManifestChannel] = Field(default_factory=list)

    def channel(self, channel_id: int) -> Optional[ManifestChannel]:
        for entry in self.channels:
            if entry.id == channel_id:
                return entry
        return None

    def by_topic(self, topic: str) -> Optional[ManifestChannel]:
        for entry in self.channels:
            if entry.topic == topic:
                return entry
        return None

    def by_name(self, name: str) -> Optional[ManifestChannel]:
        for entry in self.channels:
            if entry.name == name:
                return entry
        return None

    def valid_ids(self) -> set:
        return {MASK_CHANNEL_ID} | {c.id for c in self.channels}


class DropoutInterval(BaseModel):
    """Span during which a modality's mask bit was clear."""

    start_ns: int
    end_ns: int

    @property
    def duration_s(self) -> float:
        return ns_to_seconds(self.end_ns - self.start_ns)


class ModalityAudit(BaseModel):
    """Dropouts of one modality."""

    name: str
    bit: int
    intervals: List[DropoutInterval] = Field(default_factory=list)
    data_records: int = 0

    @property
    def dropout_s(self) -> float:
        return sum(i.duration_s for i in self.intervals)


class AuditReport(BaseModel):
    """Dropout report for one episode."""

    episode: str
    start_ns: int = 0
    end_ns: int = 0
    mask_records: int = 0
    modalities: List[ModalityAudit] = Field(default_factory=list)
    required: List[str] = Field(default_factory=list)
    usable_segments: List[DropoutInterval] = Field(default_factory=list)
    damage_offset: Optional[int] = Field(None, description="Byte offset of trailing damage, if any")

    @property
    def duration_s(self) -> float:
        return ns_to_seconds(self.end_ns - self.start_ns)

    @property
    def usable_s(self) -> float:
        return sum(s.duration_s for s in self.usable_segments)

    def modality(self, name: str) -> Optional[ModalityAudit]:
        for entry in self.modalities:
            if entry.name == name:
                return entry
        return None

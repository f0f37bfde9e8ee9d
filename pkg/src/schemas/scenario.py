"""
Pydantic schemas for scenario runs and the mask-path benchmark.
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from src.schemas.events import EventKind


class Condition(str, Enum):
    """Runtime modality-change condition."""

    FULL = "Full"
    NO_TACTILE = "NoTactile"
    HOT_UNPLUG = "HotUnplug"
    HOT_REPLUG = "HotReplug"


class ConsumerMode(str, Enum):
    """Consumer pipeline under test."""

    MASK_AWARE = "MaskAware"
    STATIC_CONFIG = "StaticConfig"


class ScenarioStatus(str, Enum):
    NORMAL = "Normal"
    DEGRADED = "Degraded"
    CRASH = "Crash"


class TimelineEvent(BaseModel):
    """Scripted hot-plug event at an offset from scenario start."""

    offset_s: float = Field(..., ge=0)
    kind: EventKind
    device: str


class ScenarioSpec(BaseModel):
    """One cell of the condition/mode grid."""

    condition: Condition
    mode: ConsumerMode
    timeline: List[TimelineEvent] = Field(default_factory=list)
    duration_s: float = Field(10.0, gt=0)
    required: str = Field(
        "tactile_left", description="Modality the consumer needs for confident output"
    )


class PresenceChange(BaseModel):
    """Observed change of one channel's presence flag."""

    t_s: float
    channel: str
    present: bool


class ScenarioOutcome(BaseModel):
    """Result of one scenario run."""

    condition: Condition
    mode: ConsumerMode
    status: ScenarioStatus
    observations_emitted: int = 0
    zero_filled_fraction: Dict[str, float] = Field(default_factory=dict)
    decisions: Dict[str, int] = Field(default_factory=dict)
    vector_length: Optional[int] = None
    max_gap_ms: float = 0.0
    crashed_at_s: Optional[float] = None
    crash_reason: Optional[str] = None
    transition_log: List[str] = Field(default_factory=list)
    presence_changes: List[PresenceChange] = Field(default_factory=list)

    def presence_pattern(self, channel: str) -> List[int]:
        """Presence flags of `channel` with consecutive repeats collapsed, e.g. [1, 0, 1]."""
        pattern: List[int] = []
        for change in self.presence_changes:
            if change.channel != channel:
                continue
            flag = 1 if change.present else 0
            if not pattern or pattern[-1] != flag:
                pattern.append(flag)
        return pattern


class LatencySummary(BaseModel):
    """Distribution of one latency stage, in milliseconds."""

    samples: int = 0
    p50_ms: float = 0.0
    p95_ms: float = 0.0
    p99_ms: float = 0.0
    max_ms: float = 0.0


class BenchReport(BaseModel):
    """Mask-path benchmark results."""

    transitions: int = 0
    detach_to_clear: LatencySummary = Field(default_factory=LatencySummary)
    attach_to_set: LatencySummary = Field(default_factory=LatencySummary)
    publish_rate_hz: float = 0.0
    publish_window_s: float = 0.0
    sequence_monotone: bool = True
    torn_reads: int = 0
    attach_to_first_data: Optional[LatencySummary] = None

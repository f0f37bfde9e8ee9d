"""
Synchronized observation types and the fixed-dimension helpers built on them.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.core.exceptions import ShapeMismatch
from src.core.mask import PhysicalMask
from src.core.registry import Registry
from src.schemas.device import MAX_DEVICES, DeviceDescriptor

logger = logging.getLogger(__name__)

PAYLOAD_DTYPE = np.float32


class ChannelSpec(BaseModel):
    """One synchronized channel: topic, declared shape, mask bit and nominal rate."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(..., min_length=1)
    topic: str = Field(..., min_length=1)
    shape: Tuple[int, ...] = (1,)
    bit: int = Field(..., ge=0, lt=MAX_DEVICES)
    nominal_rate_hz: float = Field(30.0, gt=0)

    @field_validator("shape")
    @classmethod
    def positive_dims(cls, v):
        if not v or any(d <= 0 for d in v):
            raise ValueError(f"shape {v} must have positive dimensions")
        return tuple(v)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def period_ns(self) -> int:
        return int(1_000_000_000 / self.nominal_rate_hz)

    @classmethod
    def from_descriptor(cls, descriptor: DeviceDescriptor) -> "ChannelSpec":
        return cls(
            name=descriptor.name,
            topic=descriptor.topic,
            shape=descriptor.shape,
            bit=descriptor.bit,
            nominal_rate_hz=descriptor.rate_hz,
        )

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=PAYLOAD_DTYPE)

    def decode(self, payload: Union[bytes, np.ndarray]) -> np.ndarray:
        """
        Payload as an array of the declared shape.

        Raises:
            ShapeMismatch: Element count differs from the declared shape
        """
        if isinstance(payload, (bytes, bytearray, memoryview)):
            array = np.frombuffer(payload, dtype=PAYLOAD_DTYPE)
        else:
            array = np.asarray(payload, dtype=PAYLOAD_DTYPE)
        if array.size != self.size:
            raise ShapeMismatch(
                f"{self.name}: payload has {array.size} elements, "
                f"shape {self.shape} needs {self.size}"
            )
        return array.reshape(self.shape)


def channel_specs(registry: Registry) -> List[ChannelSpec]:
    """Channel specs for every registered device, in bit order."""
    return [ChannelSpec.from_descriptor(d) for d in sorted(registry, key=lambda d: d.bit)]


@dataclass
class ChannelSample:
    """One channel slot of an observation."""

    payload: np.ndarray
    present: bool
    stale: bool = False
    source_timestamp_ns: Optional[int] = None


@dataclass
class SyncedObservation:
    """Time-aligned group of channel samples around `t_ref`."""

    t_ref: int
    channels: Dict[str, ChannelSample] = field(default_factory=dict)
    mask_snapshot: Optional[PhysicalMask] = None

    def presence(self) -> Dict[str, bool]:
        return {name: sample.present for name, sample in self.channels.items()}

    def is_present(self, name: str) -> bool:
        sample = self.channels.get(name)
        return sample is not None and sample.present


def assemble_observation_vector(
    obs: SyncedObservation, specs: Optional[Sequence[ChannelSpec]] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Flatten an observation into one fixed-length vector.

    Channel payloads are concatenated in channel-spec order; an absent channel
    contributes exactly zeros over its span.

    Args:
        obs: Synchronized observation
        specs: Channel order; the observation's own order when omitted

    Returns:
        (vector, presence) where presence holds one 0/1 flag per channel
    """
    names: Iterable[str] = [s.name for s in specs] if specs is not None else obs.channels.keys()
    parts = []
    flags = []
    for name in names:
        sample = obs.channels[name]
        if sample.present:
            parts.append(np.ravel(sample.payload).astype(PAYLOAD_DTYPE, copy=False))
        else:
            parts.append(np.zeros(sample.payload.size, dtype=PAYLOAD_DTYPE))
        flags.append(1.0 if sample.present else 0.0)
    vector = np.concatenate(parts) if parts else np.zeros(0, dtype=PAYLOAD_DTYPE)
    return vector, np.asarray(flags, dtype=PAYLOAD_DTYPE)


def diff_image(current: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """
    Per-pixel (current - reference) / 2 + 0.5, clipped to [0, 1].

    Raises:
        ShapeMismatch: Images differ in shape
    """
    current = np.asarray(current, dtype=PAYLOAD_DTYPE)
    reference = np.asarray(reference, dtype=PAYLOAD_DTYPE)
    if current.shape != reference.shape:
        raise ShapeMismatch(f"diff of {current.shape} against {reference.shape}")
    return np.clip((current - reference) / 2.0 + 0.5, 0.0, 1.0)


class DiffImageTracker:
    """Diff images of a tactile stream against its first frame of the episode."""

    def __init__(self):
        self.reference: Optional[np.ndarray] = None

    def reset(self) -> None:
        """Start a new episode; the next frame becomes the reference."""
        self.reference = None

    def update(self, frame: np.ndarray) -> np.ndarray:
        frame = np.asarray(frame, dtype=PAYLOAD_DTYPE)
        if self.reference is None:
            self.reference = frame.copy()
            logger.debug(f"Diff reference captured with shape {frame.shape}")
        return diff_image(frame, self.reference)

    def apply(self, obs: SyncedObservation, name: str) -> None:
        """Replace a present channel's payload with its diff image in place."""
        sample = obs.channels.get(name)
        if sample is not None and sample.present:
            sample.payload = self.update(sample.payload)

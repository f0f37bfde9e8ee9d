"""
Deterministic synthetic payloads.

Frame n of a stream is a pure function of (kind, shape, seed, n), so every
downstream test can recompute exactly what a virtual sensor published.
Values are float32 in [0, 1].
"""

from enum import Enum
from typing import Optional, Tuple

import numpy as np

PAYLOAD_DTYPE = np.float32
CONTACT_DELTA = 0.3


class PayloadKind(str, Enum):
    """Synthetic payload families."""

    CAMERA = "camera"
    TACTILE = "tactile"
    MOTOR = "motor"


DEFAULT_SHAPES = {
    PayloadKind.CAMERA: (24, 32, 3),
    PayloadKind.TACTILE: (16, 16),
    PayloadKind.MOTOR: (6,),
}


def contact_region(shape: Tuple[int, ...]) -> np.ndarray:
    """
    Boolean mask of the contact disk: centred, radius a quarter of the
    shorter image side, broadcast over any trailing channel dimensions.
    """
    if len(shape) < 2:
        return np.ones(shape, dtype=bool)
    h, w = shape[0], shape[1]
    yy, xx = np.mgrid[0:h, 0:w]
    radius = max(1.0, min(h, w) / 4.0)
    disk = (yy - (h - 1) / 2.0) ** 2 + (xx - (w - 1) / 2.0) ** 2 <= radius**2
    return np.broadcast_to(disk.reshape((h, w) + (1,) * (len(shape) - 2)), shape)


def _tactile_background(shape: Tuple[int, ...], seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0])
    return rng.uniform(0.2, 0.6, size=shape).astype(PAYLOAD_DTYPE)


def generate_frame(
    kind: PayloadKind,
    shape: Tuple[int, ...],
    seed: int,
    n: int,
    contact_frame: Optional[int] = None,
) -> np.ndarray:
    """
    Frame n of a synthetic stream.

    Args:
        kind: Payload family
        shape: Frame dimensions
        seed: Stream seed
        n: Frame index (0-based)
        contact_frame: Tactile only; frames from this index on show a contact disk

    Returns:
        float32 array of `shape`
    """
    kind = PayloadKind(kind)
    if kind is PayloadKind.CAMERA:
        return np.random.default_rng([seed, n]).random(shape, dtype=PAYLOAD_DTYPE)

    if kind is PayloadKind.TACTILE:
        frame = _tactile_background(shape, seed)
        if contact_frame is not None and n >= contact_frame:
            frame = np.where(contact_region(shape), frame + PAYLOAD_DTYPE(CONTACT_DELTA), frame)
        return frame.astype(PAYLOAD_DTYPE)

    phases = np.random.default_rng([seed, 0]).uniform(0.0, 2 * np.pi, size=shape)
    return (0.5 + 0.5 * np.sin(0.1 * n + phases)).astype(PAYLOAD_DTYPE)


def encode_payload(frame: np.ndarray) -> bytes:
    """Raw little-endian float32 bytes of a frame."""
    return np.ascontiguousarray(frame, dtype="<f4").tobytes()

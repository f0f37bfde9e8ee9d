"""
Approximate-time synchronizer.

Groups samples from asynchronous channel streams into SyncedObservations:

- A channel is physically present at time t iff its bit is set in the mask
  snapshot closest to t (the earlier snapshot wins a tie). Without any mask
  snapshot every channel counts as present.
- Anchor: among channels with an eligible (present, unconsumed) sample, let
  e be the earliest eligible timestamp; the slowest channel (then channel-spec
  order) whose eligible sample lies within e + its period + window anchors
  the group, and t_ref is that sample's timestamp.
- Every other present channel contributes its unconsumed sample closest to
  t_ref within +/- window (the earlier sample wins a tie). A present channel
  without one is zero-filled and flagged stale; an absent one is zero-filled.
- After a group, samples at or before t_ref and every sample used are
  consumed. Samples arriving at or before the last t_ref are dropped as late.
"""

import bisect
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.config import settings
from src.core.exceptions import ShapeMismatch
from src.core.mask import PhysicalMask
from src.sync.observation import ChannelSample, ChannelSpec, SyncedObservation

logger = logging.getLogger(__name__)

Payload = Union[bytes, np.ndarray]


@dataclass
class _Buffered:
    timestamp_ns: int
    payload: np.ndarray


class Synchronizer:
    """
    Streaming synchronizer for one consumer.

    push()/push_mask() feed samples in per-channel timestamp order;
    poll(watermark) emits every group that no future sample at or after the
    watermark can change; flush() emits the rest.
    """

    def __init__(self, specs: Sequence[ChannelSpec], window_ns: Optional[int] = None):
        """
        Initialize synchronizer.

        Args:
            specs: Channels in output order
            window_ns: Alignment window (default SYNC_WINDOW_MS)

        Raises:
            ValueError: No channels, duplicate names or a non-positive window
        """
        window_ns = settings.sync_window_ns if window_ns is None else int(window_ns)
        if window_ns <= 0:
            raise ValueError(f"sync window must be positive, got {window_ns} ns")
        if not specs:
            raise ValueError("synchronizer needs at least one channel")
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate channel names in {names}")

        self.specs = list(specs)
        self.window_ns = window_ns
        self._by_name = {s.name: s for s in self.specs}
        self._by_topic = {s.topic: s for s in self.specs}
        self._samples: Dict[str, List[_Buffered]] = {s.name: [] for s in self.specs}
        self._times: Dict[str, List[int]] = {s.name: [] for s in self.specs}
        self._masks: List[PhysicalMask] = []
        self._mask_times: List[int] = []
        ranked = sorted(enumerate(self.specs), key=lambda p: (p[1].nominal_rate_hz, p[0]))
        self._anchor_order = [s.name for _, s in ranked]
        self._lookahead = max(s.period_ns for s in self.specs) + 2 * window_ns

        self.last_t_ref: Optional[int] = None
        self.emitted = 0
        self.late_dropped = 0
        self.malformed = 0
        self.zero_filled: Dict[str, int] = {s.name: 0 for s in self.specs}
        self.stale: Dict[str, int] = {s.name: 0 for s in self.specs}

    def spec_for_topic(self, topic: str) -> Optional[ChannelSpec]:
        return self._by_topic.get(topic)

    def push(self, name: str, timestamp_ns: int, payload: Payload) -> bool:
        """
        Buffer one channel sample.

        Returns:
            False if the sample was dropped (late, out of order or malformed)

        Raises:
            KeyError: Unknown channel name
        """
        spec = self._by_name[name]
        try:
            array = spec.decode(payload)
        except ShapeMismatch as e:
            self.malformed += 1
            if self.malformed == 1 or self.malformed % 100 == 0:
                logger.warning(f"Dropping malformed sample ({self.malformed} total): {e}")
            return False

        times = self._times[name]
        if (self.last_t_ref is not None and timestamp_ns <= self.last_t_ref) or (
            times and timestamp_ns < times[-1]
        ):
            self.late_dropped += 1
            if self.late_dropped == 1 or self.late_dropped % 100 == 0:
                logger.warning(f"Dropping late sample on {name} ({self.late_dropped} total)")
            return False

        times.append(timestamp_ns)
        self._samples[name].append(_Buffered(timestamp_ns, array))
        return True

    def push_topic(self, topic: str, timestamp_ns: int, payload: Payload) -> bool:
        """push() keyed by topic; samples on unknown topics are ignored."""
        spec = self._by_topic.get(topic)
        if spec is None:
            return False
        return self.push(spec.name, timestamp_ns, payload)

    def push_mask(self, mask: PhysicalMask) -> None:
        if self._mask_times and mask.timestamp_ns < self._mask_times[-1]:
            return
        self._masks.append(mask)
        self._mask_times.append(mask.timestamp_ns)

    def mask_at(self, t: int) -> Optional[PhysicalMask]:
        """Mask snapshot closest to `t` (earlier wins a tie), None if none seen."""
        times = self._mask_times
        if not times:
            return None
        i = bisect.bisect_left(times, t)
        if i == 0:
            return self._masks[0]
        if i == len(times):
            return self._masks[-1]
        return self._masks[i - 1] if t - times[i - 1] <= times[i] - t else self._masks[i]

    def _present(self, spec: ChannelSpec, t: int) -> bool:
        mask = self.mask_at(t)
        return mask is None or mask.is_set(spec.bit)

    def _first_eligible(self, spec: ChannelSpec) -> Optional[_Buffered]:
        for sample in self._samples[spec.name]:
            if self._present(spec, sample.timestamp_ns):
                return sample
        return None

    def _nearest(self, name: str, t: int) -> Optional[int]:
        times = self._times[name]
        i = bisect.bisect_left(times, t)
        best: Optional[int] = None
        for j in (i - 1, i):
            if 0 <= j < len(times) and abs(times[j] - t) <= self.window_ns:
                if best is None or abs(times[j] - t) < abs(times[best] - t):
                    best = j
        return best

    def _consume(self, name: str, upto: int) -> None:
        del self._samples[name][:upto]
        del self._times[name][:upto]

    def _next_group(self, horizon: Optional[int]) -> Optional[SyncedObservation]:
        eligible: Dict[str, _Buffered] = {}
        for spec in self.specs:
            sample = self._first_eligible(spec)
            if sample is not None:
                eligible[spec.name] = sample
        if not eligible:
            return None

        earliest = min(s.timestamp_ns for s in eligible.values())
        if horizon is not None and horizon < earliest + self._lookahead:
            return None

        anchor = next(
            name
            for name in self._anchor_order
            if name in eligible
            and eligible[name].timestamp_ns
            <= earliest + self._by_name[name].period_ns + self.window_ns
        )
        t_ref = eligible[anchor].timestamp_ns
        mask = self.mask_at(t_ref)

        channels: Dict[str, ChannelSample] = {}
        for spec in self.specs:
            name = spec.name
            times = self._times[name]
            if mask is not None and not mask.is_set(spec.bit) and name != anchor:
                channels[name] = ChannelSample(spec.zeros(), present=False)
                self.zero_filled[name] += 1
                used = None
            else:
                used = self._nearest(name, t_ref)
                if used is None:
                    channels[name] = ChannelSample(spec.zeros(), present=False, stale=True)
                    self.zero_filled[name] += 1
                    self.stale[name] += 1
                else:
                    sample = self._samples[name][used]
                    channels[name] = ChannelSample(
                        sample.payload, present=True, source_timestamp_ns=sample.timestamp_ns
                    )
            upto = bisect.bisect_right(times, t_ref)
            if used is not None:
                upto = max(upto, used + 1)
            self._consume(name, upto)

        # Keep the last snapshot at or before t_ref; later groups may still be closest to it
        keep = max(0, bisect.bisect_right(self._mask_times, t_ref) - 1)
        del self._masks[:keep]
        del self._mask_times[:keep]

        self.last_t_ref = t_ref
        self.emitted += 1
        return SyncedObservation(t_ref=t_ref, channels=channels, mask_snapshot=mask)

    def poll(self, watermark_ns: int) -> List[SyncedObservation]:
        """
        Emit the groups that are final at `watermark_ns`.

        Args:
            watermark_ns: Every sample and mask at or before this time has been pushed

        Returns:
            Observations in increasing t_ref order
        """
        out: List[SyncedObservation] = []
        while True:
            obs = self._next_group(watermark_ns)
            if obs is None:
                return out
            out.append(obs)

    def flush(self) -> List[SyncedObservation]:
        """Emit every remaining group."""
        out: List[SyncedObservation] = []
        while True:
            obs = self._next_group(None)
            if obs is None:
                return out
            out.append(obs)

    def stats(self) -> Dict[str, object]:
        return {
            "emitted": self.emitted,
            "late_dropped": self.late_dropped,
            "malformed": self.malformed,
            "zero_filled": dict(self.zero_filled),
            "stale": dict(self.stale),
        }


def synchronize(
    specs: Sequence[ChannelSpec],
    streams: Mapping[str, Iterable[Tuple[int, Payload]]],
    masks: Iterable[PhysicalMask] = (),
    window_ns: Optional[int] = None,
) -> List[SyncedObservation]:
    """
    Synchronize complete recorded streams.

    Args:
        specs: Channels in output order
        streams: Channel name -> (timestamp_ns, payload) samples
        masks: Mask snapshots (any order)
        window_ns: Alignment window (default SYNC_WINDOW_MS)

    Returns:
        Every observation, in increasing t_ref order
    """
    sync = Synchronizer(specs, window_ns)
    for mask in sorted(masks, key=lambda m: m.timestamp_ns):
        sync.push_mask(mask)
    for name, samples in streams.items():
        for timestamp_ns, payload in sorted(samples, key=lambda s: s[0]):
            sync.push(name, timestamp_ns, payload)
    observations = sync.flush()
    logger.debug(f"Synchronized {len(observations)} observations: {sync.stats()}")
    return observations

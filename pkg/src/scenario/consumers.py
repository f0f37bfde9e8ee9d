"""
Stand-in consumers for the condition/mode grid.

Both consume SyncedObservations. The decision is keyed on the required
modality only: confident when it is present, degraded otherwise. The
mask-aware consumer never aborts on presence changes; the static-config
consumer fixes its expected channel set at the first observation and
aborts once an expected channel is physically detached.
"""

import logging
from collections import Counter
from typing import Optional, Set

from src.core.exceptions import PipelineAborted
from src.sync.observation import SyncedObservation, assemble_observation_vector

logger = logging.getLogger(__name__)

CONFIDENT = "confident"
DEGRADED = "degraded"


class MaskAwareConsumer:
    """Consumes fixed-dimension vectors with presence flags."""

    def __init__(self, required: str):
        self.required = required
        self.decisions: Counter = Counter()
        self.vector_length: Optional[int] = None
        self.observations = 0

    def decide(self, obs: SyncedObservation) -> str:
        return CONFIDENT if obs.is_present(self.required) else DEGRADED

    def consume(self, obs: SyncedObservation) -> str:
        vector, _ = assemble_observation_vector(obs)
        if self.vector_length is None:
            self.vector_length = vector.size
        elif vector.size != self.vector_length:
            raise PipelineAborted(
                f"observation vector changed length {self.vector_length} -> {vector.size}"
            )
        decision = self.decide(obs)
        self.decisions[decision] += 1
        self.observations += 1
        return decision


class StaticConfigConsumer(MaskAwareConsumer):
    """
    Baseline with a launch-time sensor list.

    Raises PipelineAborted on the first observation in which an expected
    channel is absent with its mask bit clear.
    """

    def __init__(self, required: str):
        super().__init__(required)
        self.expected: Optional[Set[str]] = None

    def consume(self, obs: SyncedObservation) -> str:
        if self.expected is None:
            self.expected = {name for name, sample in obs.channels.items() if sample.present}
            logger.info(f"Static configuration expects {sorted(self.expected)}")
        for name in sorted(self.expected):
            sample = obs.channels[name]
            if not sample.present and not sample.stale:
                raise PipelineAborted(f"expected sensor {name} disappeared")
        return super().consume(obs)

"""
Episode replay.

Re-publishes records on their original topics (masks on the mask topic)
with the recorded inter-record timing scaled by a speed factor, and
rebuilds synchronized observations from an episode offline.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import AsyncIterator, Dict, List, Optional, Tuple, Union

from src.core.config import settings
from src.recorder.container import Episode, EpisodeRecord, read_episode
from src.schemas.episode import MASK_CHANNEL_ID
from src.sync.observation import ChannelSpec, SyncedObservation
from src.sync.synchronizer import synchronize
from src.transport.client import Publisher
from src.transport.wire import MASK_TOPIC
from src.utils.clock import Clock, monotonic_clock

logger = logging.getLogger(__name__)


@dataclass
class ReplayStats:
    """Counts of one replay run."""

    published: Counter = field(default_factory=Counter)
    duration_s: float = 0.0

    @property
    def total(self) -> int:
        return sum(self.published.values())


def replay_order(episode: Episode) -> List[EpisodeRecord]:
    """Records in timestamp order; per-channel order is kept on ties."""
    return sorted(episode.records, key=lambda r: r.timestamp_ns)


async def iter_replay(
    episode: Episode, speed: float = 1.0, clock: Clock = monotonic_clock
) -> AsyncIterator[Tuple[str, EpisodeRecord]]:
    """
    Yield (topic, record) pairs paced like the recording.

    Args:
        episode: Decoded episode
        speed: Time scale; 2.0 is twice as fast, 0 is as fast as possible
        clock: Time source used for pacing

    Raises:
        ValueError: Negative speed
    """
    if speed < 0:
        raise ValueError(f"speed factor must be >= 0, got {speed}")
    records = replay_order(episode)
    if not records:
        return
    first_ns = records[0].timestamp_ns
    started = clock.now()
    for record in records:
        if speed > 0:
            due = started + (record.timestamp_ns - first_ns) / 1e9 / speed
            delay = due - clock.now()
            if delay > 0:
                await clock.sleep(delay)
        if record.channel_id == MASK_CHANNEL_ID:
            yield MASK_TOPIC, record
            continue
        topic = episode.topic_of(record.channel_id)
        if topic is not None:
            yield topic, record


async def replay(
    source: Union[str, Episode],
    endpoint: str,
    speed: float = 1.0,
    clock: Clock = monotonic_clock,
) -> ReplayStats:
    """
    Re-publish an episode through a broker.

    Args:
        source: Episode file path or decoded episode
        endpoint: Broker "host:port"
        speed: Time scale (0 = as fast as possible)
        clock: Time source used for pacing

    Returns:
        ReplayStats

    Raises:
        CorruptContainer: Damaged episode file
        ConnectFailure: Broker unreachable
    """
    episode = read_episode(source) if isinstance(source, str) else source
    topics = [c.topic for c in episode.manifest.channels] + [MASK_TOPIC]
    publisher = Publisher(endpoint, clock)
    await publisher.connect(topics)
    stats = ReplayStats()
    started = clock.now()
    try:
        async for topic, record in iter_replay(episode, speed, clock):
            await publisher.publish(topic, record.payload, record.timestamp_ns)
            stats.published[topic] += 1
    finally:
        await publisher.close()
    stats.duration_s = clock.now() - started
    logger.info(f"Replayed {stats.total} records from {episode.path} in {stats.duration_s:.2f}s")
    return stats


def episode_channel_specs(episode: Episode) -> List[ChannelSpec]:
    return [
        ChannelSpec(name=c.name, topic=c.topic, shape=c.shape, bit=c.bit, nominal_rate_hz=c.rate_hz)
        for c in episode.manifest.channels
    ]


def reconstruct_observations(
    episode: Episode, window_ns: Optional[int] = None
) -> List[SyncedObservation]:
    """Synchronized observations rebuilt from an episode's data and mask records."""
    specs = episode_channel_specs(episode)
    if not specs:
        return []
    streams: Dict[str, List[Tuple[int, bytes]]] = {s.name: [] for s in specs}
    for entry in episode.manifest.channels:
        streams[entry.name] = [(r.timestamp_ns, r.payload) for r in episode.records_for(entry.id)]
    return synchronize(
        specs,
        streams,
        episode.mask_records(),
        window_ns if window_ns is not None else settings.sync_window_ns,
    )

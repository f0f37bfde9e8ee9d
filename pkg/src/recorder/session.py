"""
Collection-mode recording session.

Subscribes to every recorded topic through the broker and appends data
records as they arrive. Mask snapshots come from the shared mask file
(polled at the mask rate) or, without one, from the mask topic; each
change is recorded and an unchanged mask is re-recorded as a keepalive.
"""

import asyncio
import logging
from typing import Dict, List, Optional, Sequence

from src.core.exceptions import MaskError, TopicUnavailable
from src.core.mask import PhysicalMask, decode_mask, encode_mask
from src.core.registry import Registry
from src.recorder.container import EpisodeWriter, build_manifest
from src.schemas.episode import MASK_CHANNEL_ID
from src.transport.client import Disconnected, Subscriber, subscribe
from src.transport.wire import MASK_TOPIC, MessageEnvelope
from src.utils.clock import Clock, monotonic_clock
from src.workers.mask_publisher import read_mask

logger = logging.getLogger(__name__)

MASK_POLL_INTERVAL_S = 0.002
# 8 ms keeps the record rate at or above 100 Hz with 2 ms polling granularity
MASK_KEEPALIVE_NS = 8_000_000
RECV_TIMEOUT_S = 0.05


class MaskDecimator:
    """Decides which mask snapshots are recorded: every change plus keepalives."""

    def __init__(self, keepalive_ns: int = MASK_KEEPALIVE_NS):
        self.keepalive_ns = keepalive_ns
        self.last: Optional[PhysicalMask] = None
        self.offered = 0
        self.kept = 0

    def offer(self, mask: PhysicalMask) -> bool:
        self.offered += 1
        last = self.last
        if last is not None:
            if mask.timestamp_ns <= last.timestamp_ns:
                return False
            unchanged = mask.mask == last.mask and mask.device_count == last.device_count
            if unchanged and mask.timestamp_ns - last.timestamp_ns < self.keepalive_ns:
                return False
        self.last = mask
        self.kept += 1
        return True


class RecordingSession:
    """One episode recording."""

    def __init__(
        self,
        path: str,
        registry: Registry,
        endpoint: str,
        topics: Optional[Sequence[str]] = None,
        mask_path: Optional[str] = None,
        keepalive_ns: int = MASK_KEEPALIVE_NS,
        clock: Clock = monotonic_clock,
    ):
        """
        Initialize recording session.

        Args:
            path: Episode file to create
            registry: Registry whose devices are recorded
            endpoint: Broker "host:port"
            topics: Data topics to record (every registered topic when None)
            mask_path: Shared mask file; the mask topic is used when None
            keepalive_ns: Longest gap between recorded mask snapshots
            clock: Time source

        Raises:
            TopicUnavailable: A requested topic is not registered
        """
        if topics is not None:
            unknown = [t for t in topics if registry.by_topic(t) is None]
            if unknown:
                raise TopicUnavailable(f"topics not in the registry: {', '.join(unknown)}")
        self.registry = registry
        self.endpoint = endpoint
        self.mask_path = mask_path
        self.clock = clock
        self.manifest = build_manifest(registry, topics)
        self.writer = EpisodeWriter(path, self.manifest)
        self.decimator = MaskDecimator(keepalive_ns)
        self.out_of_order = 0
        self.disconnects: List[Disconnected] = []
        self.mask_errors = 0
        self._stop: Optional[asyncio.Event] = None
        self._subscriber: Optional[Subscriber] = None

    @property
    def data_topics(self) -> List[str]:
        return [c.topic for c in self.manifest.channels]

    def record_mask(self, mask: PhysicalMask) -> bool:
        """Append a mask snapshot if the decimator keeps it."""
        if not self.decimator.offer(mask):
            return False
        self.writer.write(MASK_CHANNEL_ID, mask.timestamp_ns, encode_mask(mask))
        return True

    def record_envelope(self, envelope: MessageEnvelope) -> bool:
        """Append a data envelope on its manifest channel."""
        if envelope.topic == MASK_TOPIC:
            try:
                return self.record_mask(decode_mask(envelope.payload))
            except MaskError as e:
                self.mask_errors += 1
                logger.warning(f"Undecodable mask frame: {e}")
                return False
        entry = self.manifest.by_topic(envelope.topic)
        if entry is None:
            return False
        try:
            self.writer.write(entry.id, envelope.timestamp_ns, envelope.payload)
        except ValueError as e:
            self.out_of_order += 1
            logger.warning(f"Skipping record on {envelope.topic}: {e}")
            return False
        return True

    async def _poll_mask_file(self) -> None:
        assert self._stop is not None and self.mask_path is not None
        while not self._stop.is_set():
            try:
                self.record_mask(read_mask(self.mask_path))
            except MaskError as e:
                self.mask_errors += 1
                if self.mask_errors == 1:
                    logger.warning(f"Mask read failed: {e}")
            await asyncio.sleep(MASK_POLL_INTERVAL_S)

    async def _consume(self, subscriber: Subscriber) -> None:
        assert self._stop is not None
        while not self._stop.is_set():
            item = await subscriber.recv(timeout=RECV_TIMEOUT_S)
            if item is None:
                if subscriber.closed:
                    logger.warning("Broker closed the recording stream")
                    self._stop.set()
                continue
            if isinstance(item, Disconnected):
                self.disconnects.append(item)
                logger.info(f"Publisher of {item.topics} went away ({item.reason})")
                continue
            self.record_envelope(item)

    async def run(self, duration: Optional[float] = None) -> Dict[str, int]:
        """
        Record until `duration` elapses or stop() is called.

        Args:
            duration: Seconds to record; None records until stopped

        Returns:
            Records written per channel name ("mask" for channel 0)

        Raises:
            ConnectFailure: Broker unreachable
            MaskUnavailable: Shared mask file missing at start
            DiskFull: No space left
        """
        self._stop = asyncio.Event()
        topics = self.data_topics + ([] if self.mask_path else [MASK_TOPIC])
        self._subscriber = await subscribe(self.endpoint, topics)
        self.writer.open()
        tasks: List[asyncio.Task] = []
        try:
            if self.mask_path:
                self.record_mask(read_mask(self.mask_path))
                tasks.append(asyncio.create_task(self._poll_mask_file()))
            tasks.append(asyncio.create_task(self._consume(self._subscriber)))
            waiter = asyncio.create_task(self._stop.wait())
            await asyncio.wait(
                tasks + [waiter], timeout=duration, return_when=asyncio.FIRST_EXCEPTION
            )
            waiter.cancel()
            for task in tasks:
                if task.done() and task.exception() is not None:
                    raise task.exception()
        finally:
            self._stop.set()
            for task in tasks:
                task.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)
            if self.writer.counts[MASK_CHANNEL_ID] == 0:
                # Nothing seen on the mask path: the episode is fully zero-masked
                count = self.registry.device_count
                self.record_mask(PhysicalMask(device_count=count, timestamp_ns=self.clock.now_ns()))
            self.writer.close()
            await self._subscriber.close()
        return self.summary()

    def stop(self) -> None:
        if self._stop is not None:
            self._stop.set()

    def summary(self) -> Dict[str, int]:
        counts = {"mask": self.writer.counts[MASK_CHANNEL_ID]}
        for entry in self.manifest.channels:
            counts[entry.name] = self.writer.counts[entry.id]
        return counts

"""
Topic broker hosted by the daemon.

Publishers and subscribers both connect to one stream endpoint. A
connection becomes a subscriber by sending an =subscribe frame and a
publisher by sending data frames (optionally announced with =publish).
Each subscriber has its own bounded send queue that drops the oldest
frame on overflow. When a publisher's connection closes, subscribers of
its topics receive an =disconnected frame naming them.
"""

import asyncio
import logging
from collections import defaultdict
from typing import Dict, List, Optional, Set

from src.core.exceptions import ConnectFailure
from src.transport.wire import (
    ALL_TOPICS,
    DISCONNECTED_TOPIC,
    PUBLISH_TOPIC,
    SUBSCRIBE_TOPIC,
    SUBSCRIBED_TOPIC,
    FrameDecoder,
    MessageEnvelope,
    control_frame,
    control_lines,
    encode_frame,
)
from src.utils.validators import parse_endpoint

logger = logging.getLogger(__name__)

SUBSCRIBER_QUEUE_SIZE = 256
READ_CHUNK = 64 * 1024


class SubscriberConnection:
    """Broker-side state of one subscriber."""

    def __init__(self, peer: str, writer: asyncio.StreamWriter, queue_size: int):
        self.peer = peer
        self.writer = writer
        self.topics: Set[str] = set()
        self.queue: "asyncio.Queue[bytes]" = asyncio.Queue(maxsize=queue_size)
        self.dropped = 0
        self.sent = 0
        self.task: Optional[asyncio.Task] = None

    def wants(self, topic: str) -> bool:
        return topic in self.topics or ALL_TOPICS in self.topics

    def offer(self, frame: bytes) -> None:
        """Queue a frame, dropping the oldest queued one when full."""
        if self.queue.full():
            try:
                self.queue.get_nowait()
            except asyncio.QueueEmpty:
                pass
            self.dropped += 1
            if self.dropped == 1 or self.dropped % 1000 == 0:
                logger.warning(f"Subscriber {self.peer} is slow; {self.dropped} frames dropped")
        self.queue.put_nowait(frame)

    async def pump(self) -> None:
        """Write queued frames until the connection fails."""
        try:
            while True:
                frame = await self.queue.get()
                self.writer.write(frame)
                await self.writer.drain()
                self.sent += 1
        except (ConnectionError, OSError):
            pass
        except asyncio.CancelledError:
            raise


class Broker:
    """Fan-out broker for topic frames."""

    def __init__(self, endpoint: str, queue_size: int = SUBSCRIBER_QUEUE_SIZE):
        """
        Initialize broker.

        Args:
            endpoint: "host:port" to listen on (port 0 picks a free port)
            queue_size: Per-subscriber send queue length
        """
        self.host, self.port = parse_endpoint(endpoint)
        self.queue_size = queue_size
        self.subscribers: List[SubscriberConnection] = []
        self.publishers: Dict[str, Set[str]] = defaultdict(set)
        self.local_seq: Dict[str, int] = defaultdict(int)
        self.frames_in = 0
        self.corrupt = 0
        self._server: Optional[asyncio.AbstractServer] = None

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    @property
    def dropped(self) -> int:
        return sum(s.dropped for s in self.subscribers)

    def topics(self) -> List[str]:
        """Every topic currently being published through the broker."""
        published: Set[str] = set()
        for topics in self.publishers.values():
            published |= topics
        return sorted(published)

    async def start(self) -> None:
        """
        Start listening.

        Raises:
            ConnectFailure: Endpoint cannot be bound
        """
        try:
            self._server = await asyncio.start_server(self._handle, self.host, self.port)
        except OSError as e:
            raise ConnectFailure(f"cannot bind broker at {self.endpoint}: {e}")
        sockets = self._server.sockets or []
        if sockets:
            self.port = sockets[0].getsockname()[1]
        logger.info(f"Broker listening at {self.endpoint}")

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            for subscriber in list(self.subscribers):
                if subscriber.task is not None:
                    subscriber.task.cancel()
                subscriber.writer.close()
            await self._server.wait_closed()
            self._server = None
        logger.info(f"Broker stopped ({self.frames_in} frames in, {self.dropped} dropped)")

    def route(self, envelope: MessageEnvelope) -> int:
        """
        Deliver a data envelope to current subscribers of its topic.

        Returns:
            Number of subscribers it was queued for
        """
        frame = encode_frame(envelope)
        delivered = 0
        for subscriber in self.subscribers:
            if subscriber.wants(envelope.topic):
                subscriber.offer(frame)
                delivered += 1
        return delivered

    def publish_local(self, topic: str, payload: bytes, timestamp_ns: int) -> int:
        """Publish from inside the daemon (e.g. the mask topic)."""
        self.local_seq[topic] += 1
        self.publishers["local"].add(topic)
        return self.route(MessageEnvelope(topic, self.local_seq[topic], timestamp_ns, payload))

    def _notify_disconnected(self, topics: Set[str]) -> None:
        if not topics:
            return
        frame = control_frame(DISCONNECTED_TOPIC, sorted(topics))
        for subscriber in self.subscribers:
            if any(subscriber.wants(t) for t in topics):
                subscriber.offer(frame)

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer_info = writer.get_extra_info("peername")
        peer = f"{peer_info[0]}:{peer_info[1]}" if peer_info else f"conn-{id(writer)}"
        decoder = FrameDecoder()
        subscriber: Optional[SubscriberConnection] = None
        published: Set[str] = set()

        try:
            while True:
                data = await reader.read(READ_CHUNK)
                if not data:
                    break
                before = decoder.corrupt
                for envelope in decoder.feed(data):
                    if envelope.topic == SUBSCRIBE_TOPIC:
                        if subscriber is None:
                            subscriber = SubscriberConnection(peer, writer, self.queue_size)
                            subscriber.task = asyncio.create_task(subscriber.pump())
                            self.subscribers.append(subscriber)
                        requested = control_lines(envelope)
                        subscriber.topics.update(requested)
                        subscriber.offer(control_frame(SUBSCRIBED_TOPIC, requested))
                        logger.info(f"{peer} subscribed to {sorted(subscriber.topics)}")
                    elif envelope.topic == PUBLISH_TOPIC:
                        published.update(control_lines(envelope))
                        self.publishers[peer] = published
                        logger.info(f"{peer} publishes {sorted(published)}")
                    elif envelope.is_control:
                        logger.debug(f"Ignoring control frame {envelope.topic} from {peer}")
                    else:
                        if envelope.topic not in published:
                            published.add(envelope.topic)
                            self.publishers[peer] = published
                        self.frames_in += 1
                        self.route(envelope)
                if decoder.corrupt != before:
                    self.corrupt += decoder.corrupt - before
                    logger.warning(f"Dropped corrupt bytes from {peer} ({decoder.corrupt} total)")
        except (ConnectionError, OSError):
            pass
        except Exception as e:
            logger.error(f"Error in broker connection {peer}: {e}")
        finally:
            if subscriber is not None:
                if subscriber.task is not None:
                    subscriber.task.cancel()
                if subscriber in self.subscribers:
                    self.subscribers.remove(subscriber)
            if published:
                self.publishers.pop(peer, None)
                logger.info(f"Publisher {peer} disconnected ({sorted(published)})")
                self._notify_disconnected(published)
            writer.close()

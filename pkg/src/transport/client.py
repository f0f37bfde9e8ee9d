"""
Publisher and subscriber clients for the topic broker.
"""

import asyncio
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import AsyncIterator, Dict, List, Optional, Sequence, Union

from src.core.exceptions import ConnectFailure, FrameTooLarge, NotBound
from src.transport.wire import (
    DISCONNECTED_TOPIC,
    MAX_PAYLOAD,
    PUBLISH_TOPIC,
    SUBSCRIBE_TOPIC,
    SUBSCRIBED_TOPIC,
    FrameDecoder,
    MessageEnvelope,
    control_frame,
    control_lines,
    encode_frame,
)
from src.utils.clock import Clock, monotonic_clock
from src.utils.validators import parse_endpoint

logger = logging.getLogger(__name__)

CONNECT_TIMEOUT_S = 2.0


@dataclass(frozen=True)
class Disconnected:
    """Stream-level notice that publishers of `topics` went away."""

    topics: List[str]
    reason: str = "publisher disconnected"


StreamItem = Union[MessageEnvelope, Disconnected]


async def _open(endpoint: str, timeout: float) -> "tuple[asyncio.StreamReader, asyncio.StreamWriter]":
    try:
        host, port = parse_endpoint(endpoint)
    except ValueError as e:
        raise ConnectFailure(str(e))
    try:
        return await asyncio.wait_for(asyncio.open_connection(host, port), timeout=timeout)
    except (OSError, asyncio.TimeoutError) as e:
        raise ConnectFailure(f"cannot connect to {endpoint}: {e or 'timeout'}")


class Publisher:
    """Publishes envelopes through a broker with per-topic sequence numbers."""

    def __init__(self, endpoint: str, clock: Clock = monotonic_clock):
        self.endpoint = endpoint
        self.clock = clock
        self.seq: Dict[str, int] = defaultdict(int)
        self.sent = 0
        self._writer: Optional[asyncio.StreamWriter] = None

    @property
    def bound(self) -> bool:
        return self._writer is not None and not self._writer.is_closing()

    async def connect(self, topics: Sequence[str] = (), timeout: float = CONNECT_TIMEOUT_S) -> None:
        """
        Connect to the broker and announce `topics`.

        Raises:
            ConnectFailure: Broker unreachable
        """
        _, self._writer = await _open(self.endpoint, timeout)
        if topics:
            self._writer.write(control_frame(PUBLISH_TOPIC, list(topics)))
            await self._writer.drain()
        logger.info(f"Publisher connected to {self.endpoint} for {list(topics)}")

    async def publish(
        self, topic: str, payload: bytes, timestamp_ns: Optional[int] = None
    ) -> MessageEnvelope:
        """
        Publish one message.

        Args:
            topic: Data topic
            payload: Message bytes (at most 16 MiB)
            timestamp_ns: Source timestamp; the clock's now when omitted

        Returns:
            The envelope sent

        Raises:
            FrameTooLarge: Payload above the frame cap
            NotBound: Not connected
        """
        if len(payload) > MAX_PAYLOAD:
            raise FrameTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
        if not self.bound:
            raise NotBound(f"publisher for {topic} is not connected")

        self.seq[topic] += 1
        envelope = MessageEnvelope(
            topic=topic,
            seq=self.seq[topic],
            timestamp_ns=timestamp_ns if timestamp_ns is not None else self.clock.now_ns(),
            payload=payload,
        )
        assert self._writer is not None
        self._writer.write(encode_frame(envelope))
        await self._writer.drain()
        self.sent += 1
        return envelope

    async def close(self) -> None:
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except (ConnectionError, OSError):
                pass
            self._writer = None


class Subscriber:
    """
    Subscription to a set of topics.

    Iterating yields MessageEnvelopes for the requested topics and a
    Disconnected notice when a publisher (or the broker) goes away.
    """

    def __init__(self, endpoint: str, topics: Sequence[str]):
        self.endpoint = endpoint
        self.topics = list(topics)
        self.decoder = FrameDecoder()
        self.received = 0
        self._reader: Optional[asyncio.StreamReader] = None
        self._writer: Optional[asyncio.StreamWriter] = None
        self._pending: List[StreamItem] = []
        self._closed = False
        self._acked = False

    @property
    def corrupt(self) -> int:
        return self.decoder.corrupt

    @property
    def closed(self) -> bool:
        """True once the stream ended and every buffered item was consumed."""
        return self._closed and not self._pending

    async def connect(self, timeout: float = CONNECT_TIMEOUT_S) -> None:
        """
        Connect and complete the subscription handshake.

        Returns once the broker confirmed the subscription, so frames
        published afterwards are delivered.

        Raises:
            ConnectFailure: Broker unreachable
        """
        self._reader, self._writer = await _open(self.endpoint, timeout)
        self._writer.write(control_frame(SUBSCRIBE_TOPIC, self.topics))
        await self._writer.drain()
        await self._await_ack(timeout)
        logger.info(f"Subscribed to {self.topics} at {self.endpoint}")

    async def _await_ack(self, timeout: float) -> None:
        loop = asyncio.get_running_loop()
        deadline = loop.time() + timeout
        while not self._acked:
            remaining = deadline - loop.time()
            if remaining <= 0 or not await self._read_more(remaining):
                await self.close()
                raise ConnectFailure(f"no subscription acknowledgement from {self.endpoint}")

    async def _read_more(self, timeout: Optional[float]) -> bool:
        """Read and decode one chunk; False on timeout or end of stream."""
        if self._closed or self._reader is None:
            return False
        try:
            data = await asyncio.wait_for(self._reader.read(64 * 1024), timeout=timeout)
        except asyncio.TimeoutError:
            return False
        except (ConnectionError, OSError):
            data = b""
        if not data:
            self._closed = True
            self._pending.append(Disconnected(self.topics, reason="broker closed"))
            return False
        for envelope in self.decoder.feed(data):
            if envelope.topic == SUBSCRIBED_TOPIC:
                self._acked = True
            elif envelope.topic == DISCONNECTED_TOPIC:
                self._pending.append(Disconnected(control_lines(envelope)))
            elif not envelope.is_control:
                self.received += 1
                self._pending.append(envelope)
        return True

    async def add_topics(self, topics: Sequence[str]) -> None:
        """Extend the subscription on the live connection."""
        new = [t for t in topics if t not in self.topics]
        if not new or self._writer is None:
            return
        self.topics.extend(new)
        self._writer.write(control_frame(SUBSCRIBE_TOPIC, new))
        await self._writer.drain()

    async def recv(self, timeout: Optional[float] = None) -> Optional[StreamItem]:
        """
        Next item, or None on timeout or after the stream ended.
        """
        while not self._pending:
            if not await self._read_more(timeout):
                break
        return self._pending.pop(0) if self._pending else None

    async def __aiter__(self) -> AsyncIterator[StreamItem]:
        while True:
            item = await self.recv()
            if item is None:
                return
            yield item

    async def close(self) -> None:
        self._closed = True
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except (ConnectionError, OSError):
                pass
            self._writer = None


async def subscribe(
    endpoint: str, topics: Sequence[str], timeout: float = CONNECT_TIMEOUT_S
) -> Subscriber:
    """
    Open a subscription.

    Raises:
        ConnectFailure: Broker unreachable within `timeout`
    """
    subscriber = Subscriber(endpoint, topics)
    await subscriber.connect(timeout)
    return subscriber

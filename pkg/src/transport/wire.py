"""
Frame codec for the topic transport.

Frame layout (little-endian):

    "RMSG" | version u8 (1) | topic_len u16 | topic (UTF-8)
    | seq u64 | timestamp_ns u64 | payload_len u32 | payload

Topics beginning with "=" are control frames (=subscribe, =subscribed,
=publish, =disconnected) and never carry sensor data.
"""

import logging
import struct
from dataclasses import dataclass
from typing import List, Sequence

from src.core.exceptions import FrameTooLarge

logger = logging.getLogger(__name__)

FRAME_MAGIC = b"RMSG"
FRAME_VERSION = 1
MAX_PAYLOAD = 16 * 1024 * 1024
MAX_TOPIC = 0xFFFF

SUBSCRIBE_TOPIC = "=subscribe"
SUBSCRIBED_TOPIC = "=subscribed"
PUBLISH_TOPIC = "=publish"
DISCONNECTED_TOPIC = "=disconnected"
MASK_TOPIC = "/rapid/mask"
ALL_TOPICS = "*"

_HEAD = struct.Struct("<4sBH")
_TAIL = struct.Struct("<QQI")


@dataclass(frozen=True)
class MessageEnvelope:
    """One topic message."""

    topic: str
    seq: int
    timestamp_ns: int
    payload: bytes

    @property
    def is_control(self) -> bool:
        return self.topic.startswith("=")


def encode_frame(envelope: MessageEnvelope) -> bytes:
    """
    Encode an envelope as one frame.

    Raises:
        FrameTooLarge: Payload above 16 MiB or topic above 65535 bytes
    """
    topic = envelope.topic.encode("utf-8")
    if len(envelope.payload) > MAX_PAYLOAD:
        raise FrameTooLarge(
            f"payload of {len(envelope.payload)} bytes exceeds {MAX_PAYLOAD} on {envelope.topic}"
        )
    if len(topic) > MAX_TOPIC:
        raise FrameTooLarge(f"topic name of {len(topic)} bytes is too long")
    return b"".join(
        (
            _HEAD.pack(FRAME_MAGIC, FRAME_VERSION, len(topic)),
            topic,
            _TAIL.pack(envelope.seq, envelope.timestamp_ns, len(envelope.payload)),
            envelope.payload,
        )
    )


def control_frame(topic: str, lines: Sequence[str], seq: int = 0, timestamp_ns: int = 0) -> bytes:
    """Control frame whose payload is newline-separated text."""
    return encode_frame(
        MessageEnvelope(topic, seq, timestamp_ns, "\n".join(lines).encode("utf-8"))
    )


def control_lines(envelope: MessageEnvelope) -> List[str]:
    """Non-empty payload lines of a control frame."""
    text = envelope.payload.decode("utf-8", errors="replace")
    return [line.strip() for line in text.splitlines() if line.strip()]


class FrameDecoder:
    """
    Incremental stream decoder.

    Bytes that do not form a valid frame are skipped up to the next magic
    and counted in `corrupt`; they are never delivered.
    """

    def __init__(self, max_payload: int = MAX_PAYLOAD):
        self.max_payload = max_payload
        self.corrupt = 0
        self.decoded = 0
        self._buffer = bytearray()
        self._resyncing = False

    @property
    def buffered(self) -> int:
        return len(self._buffer)

    def _skip(self, count: int) -> None:
        del self._buffer[:count]
        if not self._resyncing:
            self.corrupt += 1
            self._resyncing = True

    def feed(self, data: bytes) -> List[MessageEnvelope]:
        """
        Add received bytes and return every complete frame.

        Args:
            data: Bytes read from the stream

        Returns:
            Envelopes in stream order
        """
        self._buffer.extend(data)
        frames: List[MessageEnvelope] = []
        buf = self._buffer

        while True:
            start = buf.find(FRAME_MAGIC)
            if start < 0:
                # Keep a possible partial magic at the end
                keep = len(FRAME_MAGIC) - 1
                if len(buf) > keep:
                    self._skip(len(buf) - keep)
                return frames
            if start > 0:
                self._skip(start)
                continue

            if len(buf) < _HEAD.size:
                return frames
            _, version, topic_len = _HEAD.unpack_from(buf)
            if version != FRAME_VERSION:
                self._skip(1)
                continue

            tail_at = _HEAD.size + topic_len
            if len(buf) < tail_at + _TAIL.size:
                return frames
            seq, timestamp_ns, payload_len = _TAIL.unpack_from(buf, tail_at)
            if payload_len > self.max_payload:
                self._skip(1)
                continue

            end = tail_at + _TAIL.size + payload_len
            if len(buf) < end:
                return frames

            try:
                topic = bytes(buf[_HEAD.size : tail_at]).decode("utf-8")
            except UnicodeDecodeError:
                self._skip(1)
                continue
            if not topic:
                self._skip(1)
                continue

            payload = bytes(buf[tail_at + _TAIL.size : end])
            del buf[:end]
            self.decoded += 1
            self._resyncing = False
            frames.append(MessageEnvelope(topic, seq, timestamp_ns, payload))

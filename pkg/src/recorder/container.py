"""
Episode container.

Layout (little-endian):

    "REPI" | version u8 (1) | manifest_len u32 | manifest (UTF-8 JSON)
    then records:  channel_id u8 | timestamp_ns u64 | payload_len u32 | payload

Channel 0 carries 32-byte Physical Mask records; data channels are listed
in the manifest. The file is append-only, so a writer crash leaves an
intact, readable prefix.
"""

import errno
import json
import logging
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Dict, Iterator, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from src.core.exceptions import CorruptContainer, DiskFull, MaskError, RecorderError
from src.core.mask import PhysicalMask, decode_mask
from src.core.registry import Registry
from src.schemas.episode import MASK_CHANNEL_ID, EpisodeManifest, ManifestChannel
from src.utils.helpers import format_bytes, isoformat_z, utc_now

logger = logging.getLogger(__name__)

CONTAINER_MAGIC = b"REPI"
CONTAINER_VERSION = 1

_HEADER = struct.Struct("<4sBI")
_RECORD = struct.Struct("<BQI")


@dataclass(frozen=True)
class EpisodeRecord:
    """One container record."""

    channel_id: int
    timestamp_ns: int
    payload: bytes


def build_manifest(registry: Registry, topics: Optional[Sequence[str]] = None) -> EpisodeManifest:
    """
    Manifest for recording `registry` devices.

    Channel ids are bit + 1, so id 0 stays reserved for masks.

    Args:
        registry: Loaded registry (carries the bit map)
        topics: Restrict data channels to these topics; all when None
    """
    wanted = set(topics) if topics is not None else None
    channels = [
        ManifestChannel(
            id=d.bit + 1, name=d.name, topic=d.topic, shape=d.shape, rate_hz=d.rate_hz, bit=d.bit
        )
        for d in sorted(registry, key=lambda d: d.bit)
        if wanted is None or d.topic in wanted
    ]
    return EpisodeManifest(
        start_wall_time=isoformat_z(utc_now()),
        device_count=registry.device_count,
        bit_map=registry.bit_map(),
        channels=channels,
    )


def encode_header(manifest: EpisodeManifest) -> bytes:
    body = json.dumps(manifest.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    return _HEADER.pack(CONTAINER_MAGIC, CONTAINER_VERSION, len(body)) + body


def encode_record(record: EpisodeRecord) -> bytes:
    return _RECORD.pack(record.channel_id, record.timestamp_ns, len(record.payload)) + record.payload


class EpisodeWriter:
    """Append-only writer for one episode file."""

    def __init__(self, path: str, manifest: EpisodeManifest):
        self.path = path
        self.manifest = manifest
        self.counts: Counter = Counter()
        self.bytes_written = 0
        self._valid_ids = manifest.valid_ids()
        self._last_ts: Dict[int, int] = {}
        self._file: Optional[BinaryIO] = None

    def _write(self, data: bytes) -> None:
        assert self._file is not None
        try:
            self._file.write(data)
        except OSError as e:
            if e.errno == errno.ENOSPC:
                raise DiskFull(f"disk full writing {self.path}")
            raise RecorderError(f"cannot write {self.path}: {e}")
        self.bytes_written += len(data)

    def open(self) -> "EpisodeWriter":
        """
        Create the file and write the manifest.

        Raises:
            RecorderError: File cannot be created
            DiskFull: No space left for the header
        """
        directory = os.path.dirname(os.path.abspath(self.path))
        try:
            os.makedirs(directory, exist_ok=True)
            self._file = open(self.path, "wb")
        except OSError as e:
            raise RecorderError(f"cannot create {self.path}: {e}")
        self._write(encode_header(self.manifest))
        logger.info(f"Recording to {self.path} ({len(self.manifest.channels)} data channels)")
        return self

    def write(self, channel_id: int, timestamp_ns: int, payload: bytes) -> None:
        """
        Append one record.

        Raises:
            ValueError: Unknown channel id or timestamp going backwards on its channel
            DiskFull: No space left
        """
        if channel_id not in self._valid_ids:
            raise ValueError(f"channel {channel_id} is not in the manifest")
        last = self._last_ts.get(channel_id)
        if last is not None and timestamp_ns < last:
            raise ValueError(f"channel {channel_id} timestamp {timestamp_ns} before {last}")
        self._write(encode_record(EpisodeRecord(channel_id, timestamp_ns, payload)))
        self._last_ts[channel_id] = timestamp_ns
        self.counts[channel_id] += 1

    def flush(self) -> None:
        if self._file is not None:
            self._file.flush()

    def close(self) -> None:
        if self._file is not None:
            try:
                self._file.close()
            except OSError as e:
                logger.error(f"Error closing {self.path}: {e}")
            self._file = None
            total = sum(self.counts.values())
            logger.info(f"Closed {self.path}: {total} records, {format_bytes(self.bytes_written)}")

    def __enter__(self) -> "EpisodeWriter":
        return self.open()

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


@dataclass
class Episode:
    """Decoded episode: manifest, records, and where damage starts (if any)."""

    path: str
    manifest: EpisodeManifest
    records: List[EpisodeRecord] = field(default_factory=list)
    damage_offset: Optional[int] = None

    def records_for(self, channel_id: int) -> List[EpisodeRecord]:
        return [r for r in self.records if r.channel_id == channel_id]

    def counts(self) -> Dict[int, int]:
        return dict(Counter(r.channel_id for r in self.records))

    def mask_records(self) -> List[PhysicalMask]:
        masks = []
        for record in self.records_for(MASK_CHANNEL_ID):
            try:
                masks.append(decode_mask(record.payload))
            except MaskError as e:
                logger.warning(f"Skipping undecodable mask record at {record.timestamp_ns}: {e}")
        return masks

    def topic_of(self, channel_id: int) -> Optional[str]:
        entry = self.manifest.channel(channel_id)
        return entry.topic if entry is not None else None


def _parse_header(data: bytes) -> Tuple[EpisodeManifest, int]:
    if len(data) < _HEADER.size:
        raise CorruptContainer("file shorter than the container header", 0)
    magic, version, manifest_len = _HEADER.unpack_from(data)
    if magic != CONTAINER_MAGIC:
        raise CorruptContainer(f"bad magic {magic!r}", 0)
    if version != CONTAINER_VERSION:
        raise CorruptContainer(f"unsupported container version {version}", 4)
    end = _HEADER.size + manifest_len
    if len(data) < end:
        raise CorruptContainer("manifest truncated", _HEADER.size)
    try:
        manifest = EpisodeManifest(**json.loads(data[_HEADER.size : end].decode("utf-8")))
    except (ValueError, TypeError, ValidationError) as e:
        raise CorruptContainer(f"unreadable manifest: {e}", _HEADER.size)
    return manifest, end


def iter_records(data: bytes, offset: int, valid_ids: set) -> Iterator[EpisodeRecord]:
    """
    Decode records from `offset` to the end of `data`.

    Raises:
        CorruptContainer: At the first truncated or inconsistent record
    """
    while offset < len(data):
        if len(data) - offset < _RECORD.size:
            raise CorruptContainer("truncated record header", offset)
        channel_id, timestamp_ns, length = _RECORD.unpack_from(data, offset)
        if channel_id not in valid_ids:
            raise CorruptContainer(f"unknown channel id {channel_id}", offset)
        start = offset + _RECORD.size
        if len(data) - start < length:
            raise CorruptContainer(f"record payload truncated ({length} bytes declared)", offset)
        yield EpisodeRecord(channel_id, timestamp_ns, bytes(data[start : start + length]))
        offset = start + length


def parse_episode(data: bytes, path: str = "<memory>", strict: bool = True) -> Episode:
    """
    Decode a container image.

    Args:
        data: Whole file contents
        path: Name used in reports
        strict: Raise on damage; otherwise keep the intact prefix

    Raises:
        CorruptContainer: Damaged header, or any damage when strict
    """
    manifest, offset = _parse_header(data)
    episode = Episode(path=path, manifest=manifest)
    try:
        for record in iter_records(data, offset, manifest.valid_ids()):
            episode.records.append(record)
    except CorruptContainer as e:
        if strict:
            raise
        episode.damage_offset = e.offset
        logger.warning(f"{path}: {e}; keeping {len(episode.records)} intact records")
    return episode


def read_episode(path: str, strict: bool = True) -> Episode:
    """
    Read an episode file.

    Raises:
        RecorderError: File unreadable
        CorruptContainer: See parse_episode
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise RecorderError(f"cannot read {path}: {e}")
    return parse_episode(data, path=path, strict=strict)

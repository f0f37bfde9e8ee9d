"""
Physical Mask publisher.

One writer thread stamps and writes the 32-byte mask record to the shared
file every publish interval (500 Hz by default) and refreshes the JSON
debug view every debug interval. Readers use read_mask, which re-reads
until two consecutive reads agree.
"""

import logging
import os
import tempfile
import threading
import time
from pathlib import Path
from typing import Callable, Optional, Tuple

from pydantic import BaseModel, Field

from src.core.config import Settings, settings
from src.core.exceptions import MaskIoError, MaskUnavailable, TornRead
from src.core.mask import MASK_RECORD_SIZE, PhysicalMask, decode_mask, encode_mask, render_debug
from src.core.registry import Registry
from src.utils.clock import Clock, monotonic_clock
from src.utils.helpers import isoformat_z, utc_now

logger = logging.getLogger(__name__)

StateSource = Callable[[], Tuple[int, int]]

READ_RETRIES = 16


class MaskChannel(BaseModel):
    """Where and how often the mask is published."""

    path: str
    debug_path: Optional[str] = None
    publish_interval: float = Field(0.002, gt=0, description="Seconds between records")
    debug_interval: float = Field(1.0, gt=0, description="Seconds between JSON rewrites")

    @classmethod
    def from_settings(cls, config: Settings = settings, path: Optional[str] = None) -> "MaskChannel":
        """Build a channel from settings, with an optional path override."""
        mask_path = path or config.RAPID_MASK_PATH
        return cls(
            path=mask_path,
            debug_path=config.RAPID_MASK_DEBUG_PATH or f"{mask_path}.json",
            publish_interval=config.MASK_PUBLISH_INTERVAL_MS / 1000.0,
            debug_interval=config.MASK_DEBUG_INTERVAL_S,
        )

    @property
    def resolved_debug_path(self) -> str:
        return self.debug_path or f"{self.path}.json"


class MaskPublisher:
    """Single writer of one MaskChannel."""

    def __init__(
        self,
        channel: MaskChannel,
        state_source: StateSource,
        registry: Optional[Registry] = None,
        clock: Clock = monotonic_clock,
        stop_event: Optional[threading.Event] = None,
    ):
        """
        Initialize publisher.

        Args:
            channel: Paths and intervals
            state_source: Returns (mask word, device_count); called from the writer thread
            registry: Names mask bits in the debug view; no debug view when omitted
            clock: Source of timestamp_ns
            stop_event: Shared shutdown flag; a private one when omitted
        """
        self.channel = channel
        self.state_source = state_source
        self.registry = registry
        self.clock = clock
        self.sequence = 0
        self.publish_count = 0
        self.write_errors = 0
        self.latest: Optional[PhysicalMask] = None
        self.latest_record: Optional[bytes] = None
        self._fd: Optional[int] = None
        self._stop = stop_event or threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._failing = False

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def open(self) -> None:
        """
        Open the shared file and write the first record.

        Raises:
            MaskIoError: If the path is not writable
        """
        try:
            Path(self.channel.path).parent.mkdir(parents=True, exist_ok=True)
            self._fd = os.open(self.channel.path, os.O_RDWR | os.O_CREAT, 0o644)
            os.ftruncate(self._fd, MASK_RECORD_SIZE)
        except OSError as e:
            raise MaskIoError(f"cannot open mask file {self.channel.path}: {e}")
        self.publish_once()
        if self.registry is not None and self.latest is not None:
            self.write_debug(self.latest)
        logger.info(f"Mask channel open at {self.channel.path}")

    def publish_once(self) -> PhysicalMask:
        """
        Stamp and write one record.

        Returns:
            The record written

        Raises:
            MaskIoError: If the file is not open
            OSError: If the write fails
        """
        if self._fd is None:
            raise MaskIoError("mask file is not open")

        word, device_count = self.state_source()
        record = PhysicalMask(
            device_count=device_count,
            mask=word,
            timestamp_ns=self.clock.now_ns(),
            sequence=self.sequence + 1,
        )
        data = encode_mask(record)
        # Whole record in one write; readers detect anything else by re-reading
        written = os.pwrite(self._fd, data, 0)
        if written != MASK_RECORD_SIZE:
            raise OSError(f"short mask write ({written} bytes)")

        self.sequence = record.sequence
        self.publish_count += 1
        self.latest = record
        self.latest_record = data
        return record

    def write_debug(self, record: PhysicalMask) -> None:
        """Rewrite the debug JSON via temp file and rename."""
        if self.registry is None:
            return
        target = self.channel.resolved_debug_path
        text = render_debug(record, self.registry, isoformat_z(utc_now()))
        directory = os.path.dirname(os.path.abspath(target))
        fd, tmp_path = tempfile.mkstemp(prefix=".rapid_mask.", suffix=".json", dir=directory)
        try:
            with os.fdopen(fd, "w") as f:
                f.write(text)
            os.replace(tmp_path, target)
        except OSError:
            if os.path.exists(tmp_path):
                os.unlink(tmp_path)
            raise

    def run(self) -> None:
        """Writer loop; returns within one tick of stop()."""
        interval = self.channel.publish_interval
        next_tick = time.monotonic()
        next_debug = next_tick + self.channel.debug_interval

        while not self._stop.is_set():
            try:
                record = self.publish_once()
                if self._failing:
                    logger.info("Mask writes recovered")
                    self._failing = False
                now = time.monotonic()
                if now >= next_debug:
                    self.write_debug(record)
                    next_debug = now + self.channel.debug_interval
            except Exception as e:
                self.write_errors += 1
                if not self._failing:
                    logger.error(f"Mask write failed, retrying every tick: {e}")
                    self._failing = True

            next_tick += interval
            delay = next_tick - time.monotonic()
            if delay < -interval:
                # Fell more than a tick behind; re-anchor instead of bursting
                next_tick = time.monotonic()
                delay = 0.0
            if delay > 0:
                self._stop.wait(delay)

    def start(self) -> None:
        """Open the file and start the writer thread."""
        if self._fd is None:
            self.open()
        self._stop.clear()
        self._thread = threading.Thread(target=self.run, name="rapid-mask-writer", daemon=True)
        self._thread.start()
        logger.info(
            f"Mask publisher started ({1.0 / self.channel.publish_interval:.0f} Hz, "
            f"debug every {self.channel.debug_interval:g} s)"
        )

    def stop(self, timeout: float = 1.0) -> None:
        """Stop the writer thread and close the file."""
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout)
            self._thread = None
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        logger.info(f"Mask publisher stopped after {self.publish_count} records")


def publish_loop(
    channel: MaskChannel,
    state_source: StateSource,
    stop_event: threading.Event,
    registry: Optional[Registry] = None,
) -> MaskPublisher:
    """
    Publish on the calling thread until `stop_event` is set.

    Args:
        channel: Paths and intervals
        state_source: Returns (mask word, device_count)
        stop_event: Set to request shutdown
        registry: Names mask bits in the debug view

    Returns:
        The finished publisher (for its counters)

    Raises:
        MaskIoError: If the shared file cannot be opened
    """
    publisher = MaskPublisher(channel, state_source, registry, stop_event=stop_event)
    publisher.open()
    try:
        publisher.run()
    finally:
        if publisher._fd is not None:
            os.close(publisher._fd)
            publisher._fd = None
    return publisher


def read_mask(path: str, retries: int = READ_RETRIES) -> PhysicalMask:
    """
    Read a consistent mask snapshot.

    Reads the record repeatedly until two consecutive reads are identical,
    then decodes it.

    Args:
        path: Shared mask file
        retries: Read attempts before giving up

    Returns:
        PhysicalMask

    Raises:
        MaskUnavailable: File does not exist
        BadMagic: Stable content is not a mask record
        TornRead: No two consecutive reads agreed
    """
    try:
        fd = os.open(path, os.O_RDONLY)
    except FileNotFoundError:
        raise MaskUnavailable(f"mask file {path} does not exist")
    except OSError as e:
        raise MaskUnavailable(f"mask file {path} is not readable: {e}")

    try:
        previous = os.pread(fd, MASK_RECORD_SIZE, 0)
        for _ in range(retries):
            current = os.pread(fd, MASK_RECORD_SIZE, 0)
            if current == previous:
                return decode_mask(current)
            previous = current
    finally:
        os.close(fd)

    raise TornRead(f"no stable mask read after {retries} attempts")

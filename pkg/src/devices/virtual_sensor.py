"""
rapid-vsensor: simulated sensor publisher.

Publishes deterministic synthetic frames on one topic at a fixed rate,
heartbeats to the daemon once per second, and exits on SIGTERM. The
--misbehave modes drive the supervisor's fault paths:

    ignore-term     keep running after SIGTERM (only SIGKILL stops it)
    crash-after:N   exit with status 1 after publishing frame N
    freeze[:N]      stop publishing and heartbeating after N frames
"""

import argparse
import asyncio
import logging
import os
import signal
import sys
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from src.core.config import settings
from src.core.exceptions import ConnectFailure
from src.core.logging import setup_child_logging
from src.devices.payloads import DEFAULT_SHAPES, PayloadKind, encode_payload, generate_frame
from src.transport.client import Publisher
from src.utils.clock import Clock, monotonic_clock
from src.workers.heartbeat import HeartbeatClient

logger = logging.getLogger(__name__)

HEARTBEAT_PERIOD_S = 1.0
EXIT_CRASH = 1
EXIT_ENVIRONMENT = 3


class Misbehavior(str, Enum):
    NONE = "none"
    IGNORE_TERM = "ignore-term"
    CRASH_AFTER = "crash-after"
    FREEZE = "freeze"


def parse_misbehavior(text: Optional[str]) -> Tuple[Misbehavior, int]:
    """
    Parse a --misbehave value.

    Returns:
        (mode, frame count argument)

    Raises:
        ValueError: Unknown mode or bad count
    """
    if not text or text == Misbehavior.NONE.value:
        return Misbehavior.NONE, 0
    mode_text, _, count_text = text.partition(":")
    mode = Misbehavior(mode_text)
    if mode is Misbehavior.CRASH_AFTER and not count_text:
        raise ValueError("crash-after needs a frame count, e.g. crash-after:10")
    if count_text and mode is Misbehavior.IGNORE_TERM:
        raise ValueError("ignore-term takes no argument")
    count = int(count_text) if count_text else 0
    if count < 0:
        raise ValueError(f"frame count must be >= 0, got {count}")
    return mode, count


class VirtualSensorConfig(BaseModel):
    """Configuration of one simulated sensor."""

    name: str = Field(..., min_length=1)
    topic: str = Field(..., min_length=1)
    rate_hz: float = Field(30.0, gt=0, le=120)
    kind: PayloadKind = PayloadKind.CAMERA
    shape: Optional[Tuple[int, ...]] = None
    seed: int = 0
    misbehavior: Misbehavior = Misbehavior.NONE
    misbehavior_frames: int = Field(0, ge=0)
    contact_frame: Optional[int] = Field(None, ge=0)
    endpoint: str = settings.RAPID_BIND
    heartbeat_socket: Optional[str] = None
    max_frames: Optional[int] = Field(None, ge=0)

    @field_validator("shape")
    @classmethod
    def positive_dims(cls, v):
        if v is not None and (not v or any(d <= 0 for d in v)):
            raise ValueError(f"shape {v} must have positive dimensions")
        return v

    @model_validator(mode="after")
    def default_shape(self) -> "VirtualSensorConfig":
        if self.shape is None:
            self.shape = DEFAULT_SHAPES[self.kind]
        return self

    @property
    def period(self) -> float:
        return 1.0 / self.rate_hz


class VirtualSensor:
    """One simulated publisher."""

    def __init__(self, config: VirtualSensorConfig, clock: Clock = monotonic_clock):
        self.config = config
        self.clock = clock
        self.publisher = Publisher(config.endpoint, clock)
        self.heartbeat: Optional[HeartbeatClient] = None
        if config.heartbeat_socket:
            self.heartbeat = HeartbeatClient(
                config.heartbeat_socket, config.name, group=os.getpgrp()
            )
        self.frames_published = 0
        self.term_requests = 0
        self.frozen = False
        self._stop = asyncio.Event()

    def frame(self, n: int) -> np.ndarray:
        """Frame n of this sensor's stream."""
        c = self.config
        assert c.shape is not None
        return generate_frame(c.kind, c.shape, c.seed, n, c.contact_frame)

    def request_termination(self) -> None:
        """Graceful termination request (SIGTERM)."""
        self.term_requests += 1
        if self.config.misbehavior is Misbehavior.IGNORE_TERM:
            logger.warning(f"{self.config.name}: ignoring termination request")
            return
        logger.info(f"{self.config.name}: terminating")
        self._stop.set()

    async def connect(self) -> None:
        """
        Connect to the broker and heartbeat socket.

        Raises:
            ConnectFailure: Either endpoint unreachable
        """
        await self.publisher.connect([self.config.topic])
        if self.heartbeat is not None:
            await self.heartbeat.connect()
            await self.heartbeat.beat()

    async def _sleep_until(self, deadline: float) -> None:
        delay = deadline - self.clock.now()
        if delay <= 0:
            return
        try:
            await asyncio.wait_for(self._stop.wait(), timeout=delay)
        except asyncio.TimeoutError:
            pass

    async def run(self) -> int:
        """
        Publish until terminated.

        Returns:
            Process exit status
        """
        c = self.config
        next_frame = self.clock.now()
        next_beat = next_frame + HEARTBEAT_PERIOD_S
        n = 0
        try:
            while not self._stop.is_set():
                if c.max_frames is not None and n >= c.max_frames:
                    break
                if c.misbehavior is Misbehavior.FREEZE and n >= c.misbehavior_frames:
                    if not self.frozen:
                        logger.warning(f"{c.name}: frozen after {n} frames")
                        self.frozen = True
                    await self._stop.wait()
                    break

                await self.publisher.publish(c.topic, encode_payload(self.frame(n)))
                self.frames_published += 1
                n += 1
                if c.misbehavior is Misbehavior.CRASH_AFTER and n >= c.misbehavior_frames:
                    logger.error(f"{c.name}: crashing after frame {n}")
                    return EXIT_CRASH

                now = self.clock.now()
                if self.heartbeat is not None and now >= next_beat:
                    await self.heartbeat.beat()
                    next_beat += HEARTBEAT_PERIOD_S
                next_frame += c.period
                if next_frame < now - c.period:
                    next_frame = now
                await self._sleep_until(next_frame)
        finally:
            await self.publisher.close()
            if self.heartbeat is not None:
                await self.heartbeat.close()
        logger.info(f"{c.name}: published {self.frames_published} frames")
        return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rapid-vsensor", description="Simulated RAPID sensor publisher"
    )
    parser.add_argument("--name", default=os.environ.get("RAPID_DEVICE"), help="Device name")
    parser.add_argument("--topic", default=os.environ.get("RAPID_TOPIC"), help="Data topic")
    parser.add_argument("--rate", type=float, default=30.0, help="Publish rate in Hz (default: 30)")
    parser.add_argument(
        "--kind", choices=[k.value for k in PayloadKind], default="camera", help="Payload kind"
    )
    parser.add_argument("--shape", help="Frame dimensions, e.g. 16x16 (default per kind)")
    parser.add_argument("--seed", type=int, default=0, help="Payload seed")
    parser.add_argument("--contact-frame", type=int, help="Tactile contact starts at this frame")
    parser.add_argument("--misbehave", help="ignore-term | crash-after:N | freeze[:N]")
    parser.add_argument("--connect", default=settings.RAPID_BIND, help="Broker host:port")
    parser.add_argument(
        "--heartbeat-socket",
        default=os.environ.get("RAPID_HEARTBEAT_SOCKET"),
        help="Daemon heartbeat socket (no heartbeats when unset)",
    )
    parser.add_argument("--frames", type=int, help="Stop after this many frames")
    return parser


def parse_shape(text: Optional[str]) -> Optional[Tuple[int, ...]]:
    if not text:
        return None
    return tuple(int(part) for part in text.lower().replace(",", "x").split("x") if part)


def config_from_args(argv: Optional[List[str]] = None) -> VirtualSensorConfig:
    """
    Build a config from command-line arguments.

    Raises:
        ValueError: Missing name/topic or invalid values
    """
    args = build_parser().parse_args(argv)
    if not args.name or not args.topic:
        raise ValueError("--name and --topic are required (or RAPID_DEVICE / RAPID_TOPIC)")
    mode, count = parse_misbehavior(args.misbehave)
    return VirtualSensorConfig(
        name=args.name,
        topic=args.topic,
        rate_hz=args.rate,
        kind=args.kind,
        shape=parse_shape(args.shape),
        seed=args.seed,
        misbehavior=mode,
        misbehavior_frames=count,
        contact_frame=args.contact_frame,
        endpoint=args.connect,
        heartbeat_socket=args.heartbeat_socket,
        max_frames=args.frames,
    )


async def run_virtual_sensor(config: VirtualSensorConfig) -> int:
    """
    Run a sensor in the current process until terminated.

    Returns:
        Exit status (0 clean, 1 crash, 3 endpoint unreachable)
    """
    sensor = VirtualSensor(config)
    loop = asyncio.get_running_loop()
    loop.add_signal_handler(signal.SIGTERM, sensor.request_termination)
    loop.add_signal_handler(signal.SIGINT, sensor.request_termination)
    try:
        await sensor.connect()
    except ConnectFailure as e:
        logger.error(f"{config.name}: {e}")
        return EXIT_ENVIRONMENT
    logger.info(
        f"{config.name}: publishing {config.kind.value} on {config.topic} at {config.rate_hz} Hz"
    )
    return await sensor.run()


def main(argv: Optional[List[str]] = None) -> int:
    try:
        config = config_from_args(argv)
    except ValueError as e:
        print(f"rapid-vsensor: {e}", file=sys.stderr)
        return 2
    setup_child_logging(config.name)
    return asyncio.run(run_virtual_sensor(config))


if __name__ == "__main__":
    sys.exit(main())

"""
RAPID daemon composition.

Wires the event bus, supervisor, mask publisher, broker and local sockets
into one process, plus the optional read-only FastAPI status app.
"""

import asyncio
import logging
import signal
import socket
from contextlib import asynccontextmanager
from typing import Callable, List, Optional

from fastapi import FastAPI
from pydantic import BaseModel

from src.api.endpoints import devices, health
from src.core.config import Settings, get_version, settings
from src.core.exceptions import UnsupportedPlatform
from src.core.registry import Registry
from src.events.bus import EventBus
from src.events.control import ControlServer
from src.events.udev_monitor import UdevEventSource, subscribe_os_events
from src.schemas.status import StatusSnapshot
from src.transport.beacon import Beacon, BeaconAnnouncer
from src.transport.broker import Broker
from src.transport.wire import MASK_TOPIC
from src.utils.clock import monotonic_clock
from src.workers.heartbeat import HeartbeatServer
from src.workers.launcher import Launcher, ProcessGroupLauncher
from src.workers.mask_publisher import MaskChannel, MaskPublisher
from src.workers.supervisor import Supervisor, SupervisorConfig

logger = logging.getLogger(__name__)


class DaemonOptions(BaseModel):
    """Paths and switches of one daemon instance."""

    mask_path: str
    control_socket: str
    heartbeat_socket: str
    bind: str
    beacon_host: str
    beacon_port: int
    beacon_period: float = 1.0
    mask_topic_rate_hz: float = 100.0
    os_events: bool = True
    api_enabled: bool = False
    api_host: str = "127.0.0.1"
    api_port: int = 8450

    @classmethod
    def from_settings(cls, config: Settings = settings, **overrides) -> "DaemonOptions":
        """Options from settings; non-None keyword overrides win (CLI flags)."""
        values = dict(
            mask_path=config.RAPID_MASK_PATH,
            control_socket=config.RAPID_CONTROL_SOCKET,
            heartbeat_socket=config.RAPID_HEARTBEAT_SOCKET,
            bind=config.RAPID_BIND,
            beacon_host=config.RAPID_BEACON_HOST,
            beacon_port=config.RAPID_BEACON_PORT,
            beacon_period=config.RAPID_BEACON_PERIOD_S,
            mask_topic_rate_hz=config.MASK_TOPIC_RATE_HZ,
            os_events=config.ENABLE_OS_EVENTS,
            api_enabled=config.API_ENABLED,
            api_host=config.API_HOST,
            api_port=config.API_PORT,
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class RapidDaemon:
    """One running middleware instance."""

    def __init__(
        self,
        registry: Registry,
        options: DaemonOptions,
        launcher: Optional[Launcher] = None,
        supervisor_config: Optional[SupervisorConfig] = None,
    ):
        """
        Initialize daemon.

        Args:
            registry: Loaded registry
            options: Paths and switches
            launcher: Child launcher (process groups with the broker and
                heartbeat endpoints in the environment by default)
            supervisor_config: Lifecycle timing (from settings by default)
        """
        self.registry = registry
        self.options = options
        self.bus = EventBus()
        self.broker = Broker(options.bind)
        self._launcher = launcher
        self.supervisor_config = supervisor_config or SupervisorConfig.from_settings()
        self.supervisor: Optional[Supervisor] = None
        self.publisher: Optional[MaskPublisher] = None
        self.control: Optional[ControlServer] = None
        self.heartbeats: Optional[HeartbeatServer] = None
        self.beacon: Optional[BeaconAnnouncer] = None
        self.os_events: Optional[UdevEventSource] = None
        self._tasks: List[asyncio.Task] = []
        self._api_server = None
        self._api_task: Optional[asyncio.Task] = None
        self.started = False

    def status(self) -> StatusSnapshot:
        """Consistent StatusSnapshot for the control socket and API."""
        assert self.supervisor is not None
        sequence = self.publisher.sequence if self.publisher is not None else 0
        return self.supervisor.status_snapshot(sequence)

    def beacon_payload(self) -> Beacon:
        return Beacon(
            node_name=socket.gethostname(),
            endpoint=self.broker.endpoint,
            topics=tuple(self.broker.topics()),
        )

    def ready_line(self) -> str:
        return (
            f"rapid: ready devices={len(self.registry)} mask={self.options.mask_path} "
            f"control={self.options.control_socket} bind={self.broker.endpoint}"
        )

    async def start(self) -> None:
        """
        Start every component.

        Raises:
            ConnectFailure: Broker endpoint cannot be bound
            MaskIoError: Mask path is not writable
        """
        await self.broker.start()

        launcher = self._launcher or ProcessGroupLauncher(
            extra_env={
                "RAPID_BIND": self.broker.endpoint,
                "RAPID_HEARTBEAT_SOCKET": self.options.heartbeat_socket,
            }
        )
        self.supervisor = Supervisor(self.registry, launcher, self.supervisor_config)

        channel = MaskChannel.from_settings(path=self.options.mask_path)
        self.publisher = MaskPublisher(channel, self.supervisor.presence_word, self.registry)
        self.publisher.start()

        self.heartbeats = HeartbeatServer(
            self.options.heartbeat_socket, self.supervisor.on_heartbeat
        )
        await self.heartbeats.start()
        self.control = ControlServer(self.options.control_socket, self.bus, self.status)
        await self.control.start()

        self._tasks.append(asyncio.create_task(self.supervisor.run(self.bus)))
        self._tasks.append(asyncio.create_task(self._publish_mask_topic()))

        self.beacon = BeaconAnnouncer(
            self.beacon_payload,
            self.options.beacon_host,
            self.options.beacon_port,
            self.options.beacon_period,
        )
        self.beacon.start()

        if self.options.os_events:
            try:
                self.os_events = subscribe_os_events(self.bus)
            except UnsupportedPlatform as e:
                logger.warning(f"OS hot-plug events unavailable, serving injected events only: {e}")

        if self.options.api_enabled:
            self._start_api()

        self.started = True
        logger.info(self.ready_line())

    def _start_api(self) -> None:
        import uvicorn

        config = uvicorn.Config(
            create_app(self),
            host=self.options.api_host,
            port=self.options.api_port,
            log_level="warning",
        )
        self._api_server = uvicorn.Server(config)
        self._api_task = asyncio.create_task(self._api_server.serve())
        logger.info(f"Status API at http://{self.options.api_host}:{self.options.api_port}")

    async def _publish_mask_topic(self) -> None:
        """Mirror the latest mask record onto the broker's mask topic."""
        period = 1.0 / self.options.mask_topic_rate_hz
        while True:
            try:
                if self.publisher is not None and self.publisher.latest_record is not None:
                    self.broker.publish_local(
                        MASK_TOPIC, self.publisher.latest_record, monotonic_clock.now_ns()
                    )
            except Exception as e:
                logger.error(f"Error publishing mask topic: {e}")
            await asyncio.sleep(period)

    async def stop(self) -> None:
        """Terminate children gracefully, then tear everything down."""
        logger.info("Daemon shutting down")
        if self.os_events is not None:
            self.os_events.stop()
        self.bus.close()
        if self.supervisor is not None:
            self.supervisor.stop()
            await self.supervisor.shutdown()
        if self._api_server is not None and self._api_task is not None:
            self._api_server.should_exit = True
            await self._api_task
            self._api_task = None
        for task in self._tasks:
            task.cancel()
        for task in self._tasks:
            try:
                await task
            except asyncio.CancelledError:
                pass
        self._tasks = []
        if self.beacon is not None:
            await self.beacon.stop()
        if self.control is not None:
            await self.control.stop()
        if self.heartbeats is not None:
            await self.heartbeats.stop()
        await self.broker.stop()
        if self.publisher is not None:
            self.publisher.stop()
        self.started = False
        logger.info("Daemon stopped")


async def run_daemon(
    registry: Registry,
    options: DaemonOptions,
    on_ready: Optional[Callable[[str], None]] = None,
    stop_event: Optional[asyncio.Event] = None,
) -> None:
    """
    Run a daemon until SIGINT/SIGTERM or `stop_event`.

    Args:
        registry: Loaded registry
        options: Paths and switches
        on_ready: Called once with the ready line
        stop_event: External stop flag (signals set it too)

    Raises:
        ConnectFailure: Broker endpoint cannot be bound
        MaskIoError: Mask path is not writable
    """
    stop_event = stop_event or asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        loop.add_signal_handler(sig, stop_event.set)

    daemon = RapidDaemon(registry, options)
    try:
        await daemon.start()
        if on_ready is not None:
            on_ready(daemon.ready_line())
        await stop_event.wait()
    finally:
        await daemon.stop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.remove_signal_handler(sig)


def create_app(daemon: Optional[RapidDaemon] = None) -> FastAPI:
    """
    Read-only status app over a running daemon.

    Args:
        daemon: Daemon whose state the endpoints expose
    """

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        logger.info("Status API started")
        yield
        logger.info("Status API stopped")

    app = FastAPI(
        title="RAPID Device Middleware",
        version=get_version(),
        description="Read-only status of the hot-plug device middleware",
        lifespan=lifespan,
    )
    app.state.daemon = daemon
    app.include_router(health.router)
    app.include_router(devices.router)

    @app.get("/")
    async def root():
        """Root endpoint."""
        return {
            "name": "RAPID Device Middleware",
            "version": get_version(),
            "docs": "/docs",
            "health": "/api/v1/health",
        }

    return app

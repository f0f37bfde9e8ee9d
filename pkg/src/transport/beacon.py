"""
Node discovery beacons.

A node announces itself with one UDP datagram per period:

    RAPIDBEACON 1 <node_name> <host:port> <comma-separated-topics>

discover() listens for a window and returns every node heard, once.
"""

import asyncio
import logging
import socket
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from src.core.exceptions import BeaconSocketError
from src.utils.validators import parse_endpoint

logger = logging.getLogger(__name__)

BEACON_PREFIX = "RAPIDBEACON"
BEACON_VERSION = 1
BEACON_PERIOD_S = 1.0
MAX_DATAGRAM = 8192


@dataclass(frozen=True)
class Beacon:
    """One node announcement."""

    node_name: str
    endpoint: str
    topics: Tuple[str, ...] = ()


def format_beacon(beacon: Beacon) -> bytes:
    """Datagram text for a beacon."""
    topics = ",".join(beacon.topics)
    text = f"{BEACON_PREFIX} {BEACON_VERSION} {beacon.node_name} {beacon.endpoint} {topics}"
    return text.rstrip().encode("utf-8")


def parse_beacon(data: bytes) -> Optional[Beacon]:
    """
    Parse a datagram.

    Returns:
        Beacon, or None for anything that is not a version-1 beacon
    """
    try:
        parts = data.decode("utf-8").split()
    except UnicodeDecodeError:
        return None
    if len(parts) not in (4, 5) or parts[0] != BEACON_PREFIX or parts[1] != str(BEACON_VERSION):
        return None
    try:
        parse_endpoint(parts[3])
    except ValueError:
        return None
    topics = tuple(t for t in parts[4].split(",") if t) if len(parts) == 5 else ()
    return Beacon(node_name=parts[2], endpoint=parts[3], topics=topics)


@dataclass
class DiscoveryResult:
    """Nodes heard during one listen window."""

    nodes: Dict[str, Beacon] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    datagrams: int = 0

    def endpoints(self) -> List[str]:
        return sorted({b.endpoint for b in self.nodes.values()})

    def add(self, beacon: Beacon) -> None:
        self.datagrams += 1
        known = self.nodes.get(beacon.node_name)
        if known is None:
            self.nodes[beacon.node_name] = beacon
            return
        if known.endpoint != beacon.endpoint:
            warning = (
                f"DuplicateName: node {beacon.node_name} announced from "
                f"{known.endpoint} and {beacon.endpoint}"
            )
            if warning not in self.warnings:
                logger.warning(warning)
                self.warnings.append(warning)
            return
        # Topic lists can grow between announcements
        self.nodes[beacon.node_name] = beacon


class _Collector(asyncio.DatagramProtocol):
    def __init__(self, result: DiscoveryResult):
        self.result = result

    def datagram_received(self, data: bytes, addr) -> None:
        beacon = parse_beacon(data)
        if beacon is not None:
            self.result.add(beacon)


def _open_socket(host: str, port: int, bind: bool) -> socket.socket:
    try:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        if hasattr(socket, "SO_REUSEPORT"):
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_BROADCAST, 1)
        if bind:
            sock.bind((host, port))
        sock.setblocking(False)
        return sock
    except OSError as e:
        raise BeaconSocketError(f"beacon socket {host}:{port}: {e}")


class BeaconAnnouncer:
    """Sends a node's beacon every period until stopped."""

    def __init__(
        self,
        source: Callable[[], Beacon],
        host: str,
        port: int,
        period: float = BEACON_PERIOD_S,
    ):
        """
        Initialize announcer.

        Args:
            source: Returns the current beacon (topics may change at runtime)
            host: Destination address (loopback, unicast or broadcast)
            port: Destination UDP port
            period: Seconds between announcements
        """
        self.source = source
        self.host = host
        self.port = port
        self.period = period
        self.sent = 0
        self._sock: Optional[socket.socket] = None
        self._task: Optional[asyncio.Task] = None

    def announce_once(self) -> None:
        """
        Send one datagram.

        Raises:
            BeaconSocketError: Socket cannot be opened or send fails
        """
        if self._sock is None:
            self._sock = _open_socket(self.host, self.port, bind=False)
        try:
            self._sock.sendto(format_beacon(self.source()), (self.host, self.port))
        except OSError as e:
            raise BeaconSocketError(f"beacon send to {self.host}:{self.port}: {e}")
        self.sent += 1

    async def run(self) -> None:
        logger.info(f"Announcing beacons to {self.host}:{self.port} every {self.period}s")
        failures = 0
        while True:
            try:
                self.announce_once()
                failures = 0
            except BeaconSocketError as e:
                failures += 1
                if failures == 1:
                    logger.warning(f"Beacon not sent: {e}")
            await asyncio.sleep(self.period)

    def start(self) -> None:
        self._task = asyncio.create_task(self.run())

    async def stop(self) -> None:
        if self._task is not None:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass
            self._task = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None


async def discover(host: str, port: int, listen: float = 3.0) -> DiscoveryResult:
    """
    Listen for beacons.

    Args:
        host: Local address to bind ("0.0.0.0" to hear broadcasts)
        port: UDP port announcers send to
        listen: Listen window in seconds

    Returns:
        DiscoveryResult with each node once

    Raises:
        BeaconSocketError: Port cannot be bound
    """
    result = DiscoveryResult()
    sock = _open_socket(host, port, bind=True)
    loop = asyncio.get_running_loop()
    transport, _ = await loop.create_datagram_endpoint(lambda: _Collector(result), sock=sock)
    try:
        await asyncio.sleep(listen)
    finally:
        transport.close()
    logger.info(f"Discovered {len(result.nodes)} node(s) from {result.datagrams} beacon(s)")
    return result

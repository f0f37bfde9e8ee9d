"""
Heartbeat channel between supervised children and the daemon.

Children write one line per interval, ``HB <name> <seq> [<pgid>]``, to a
local stream socket; the daemon's HeartbeatServer hands each line to the
supervisor on the event loop thread.
"""

import asyncio
import logging
import os
from typing import Callable, List, Optional, Tuple

from src.core.exceptions import ConnectFailure

logger = logging.getLogger(__name__)

HeartbeatCallback = Callable[[str, Optional[int], Optional[int]], None]
Heartbeat = Tuple[str, Optional[int], Optional[int]]


def format_heartbeat(name: str, seq: int, group: Optional[int] = None) -> bytes:
    """Encode one heartbeat line."""
    tail = f" {group}" if group is not None else ""
    return f"HB {name} {seq}{tail}\n".encode("utf-8")


def parse_heartbeat(line: str) -> Optional[Heartbeat]:
    """
    Parse one heartbeat line.

    Args:
        line: Text such as "HB tactile_left 17 4242"

    Returns:
        (name, seq, group) or None if the line is not a heartbeat
    """
    parts = line.strip().split()
    if not 2 <= len(parts) <= 4 or parts[0] != "HB":
        return None
    try:
        numbers: List[Optional[int]] = [int(p) for p in parts[2:]]
    except ValueError:
        return None
    numbers += [None] * (2 - len(numbers))
    return parts[1], numbers[0], numbers[1]


class HeartbeatServer:
    """Unix-socket listener feeding heartbeats to a callback."""

    def __init__(self, path: str, callback: HeartbeatCallback):
        self.path = path
        self.callback = callback
        self.received = 0
        self.malformed = 0
        self._server: Optional[asyncio.AbstractServer] = None

    async def start(self) -> None:
        if os.path.exists(self.path):
            os.unlink(self.path)
        self._server = await asyncio.start_unix_server(self._handle, path=self.path)
        logger.info(f"Heartbeat socket listening at {self.path}")

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                parsed = parse_heartbeat(line.decode("utf-8", errors="replace"))
                if parsed is None:
                    self.malformed += 1
                    logger.warning(f"Malformed heartbeat line: {line[:80]!r}")
                    continue
                self.received += 1
                self.callback(*parsed)
        except (ConnectionResetError, asyncio.IncompleteReadError):
            pass
        except Exception as e:
            logger.error(f"Error in heartbeat connection: {e}")
        finally:
            writer.close()

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
        if os.path.exists(self.path):
            os.unlink(self.path)


class HeartbeatClient:
    """Child-side heartbeat sender."""

    def __init__(self, path: str, name: str, group: Optional[int] = None):
        self.path = path
        self.name = name
        self.group = group
        self.seq = 0
        self._writer: Optional[asyncio.StreamWriter] = None

    async def connect(self) -> None:
        """
        Open the heartbeat socket.

        Raises:
            ConnectFailure: Socket is not reachable
        """
        try:
            _, self._writer = await asyncio.open_unix_connection(self.path)
        except OSError as e:
            raise ConnectFailure(f"heartbeat socket {self.path}: {e}")

    async def beat(self) -> None:
        """Send one heartbeat; reconnects once if the daemon restarted."""
        self.seq += 1
        for _ in range(2):
            if self._writer is None:
                try:
                    await self.connect()
                except ConnectFailure as e:
                    logger.warning(f"Heartbeat not sent: {e}")
                    return
            try:
                self._writer.write(format_heartbeat(self.name, self.seq, self.group))
                await self._writer.drain()
                return
            except (ConnectionError, OSError):
                self._writer = None

    async def close(self) -> None:
        if self._writer is not None:
            self._writer.close()
            self._writer = None

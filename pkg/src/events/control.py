"""
Local control socket.

Speaks one JSON object per line in each direction:

    {"kind": "attach", "vid": "0x1234", "pid": "0x5678", "serial": "TACL001"}
    {"cmd": "status"}

Event lines are injected into the EventBus and answered with the
supervisor's outcome; status lines are answered with a StatusSnapshot.
"""

import asyncio
import json
import logging
import os
from typing import Any, Callable, Dict, Optional

from pydantic import ValidationError

from src.core.exceptions import ChannelClosed, DaemonUnreachable, EventBusOverflow
from src.events.bus import EventBus
from src.schemas.device import DeviceIdentity
from src.schemas.events import EventKind, HotplugEvent
from src.schemas.status import StatusSnapshot
from src.utils.clock import Clock, monotonic_clock

logger = logging.getLogger(__name__)

ACK_TIMEOUT_S = 5.0
MAX_LINE = 64 * 1024

StatusProvider = Callable[[], StatusSnapshot]


def parse_event_request(request: Dict[str, Any], timestamp_ns: int) -> HotplugEvent:
    """
    Turn a control-line object into a HotplugEvent.

    Raises:
        ValueError: Unknown kind or bad identity
    """
    try:
        kind = EventKind(str(request.get("kind", "")).lower())
    except ValueError:
        raise ValueError(f"unknown event kind {request.get('kind')!r}")
    try:
        identity = DeviceIdentity(
            vid=request.get("vid"), pid=request.get("pid"), serial=request.get("serial")
        )
    except (ValidationError, ValueError) as e:
        raise ValueError(f"bad identity: {e}")
    return HotplugEvent(
        kind=kind,
        identity=identity,
        device_path=request.get("device_path"),
        timestamp_ns=timestamp_ns,
        source="inject",
    )


class ControlServer:
    """Line-JSON server on a unix stream socket."""

    def __init__(
        self,
        path: str,
        bus: EventBus,
        status_provider: StatusProvider,
        clock: Clock = monotonic_clock,
    ):
        self.path = path
        self.bus = bus
        self.status_provider = status_provider
        self.clock = clock
        self._server: Optional[asyncio.AbstractServer] = None

    async def start(self) -> None:
        if os.path.exists(self.path):
            os.unlink(self.path)
        self._server = await asyncio.start_unix_server(
            self._handle, path=self.path, limit=MAX_LINE
        )
        logger.info(f"Control socket listening at {self.path}")

    async def handle_request(self, request: Dict[str, Any]) -> Dict[str, Any]:
        """
        Answer one request object.

        Args:
            request: Parsed JSON line

        Returns:
            Response object (always carries "ok")
        """
        if request.get("cmd") == "status":
            return {"ok": True, "status": self.status_provider().model_dump(mode="json")}

        try:
            event = parse_event_request(request, self.clock.now_ns())
        except ValueError as e:
            return {"ok": False, "error": "BadRequest", "message": str(e)}

        try:
            ack = self.bus.inject(event)
        except (ChannelClosed, EventBusOverflow) as e:
            return {"ok": False, "error": type(e).__name__, "message": str(e)}

        try:
            outcome = await asyncio.wait_for(ack, timeout=ACK_TIMEOUT_S)
        except asyncio.TimeoutError:
            return {"ok": True, "queued": True, "message": "queued; no outcome yet"}
        return {"ok": True, "outcome": outcome.model_dump(mode="json")}

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                try:
                    request = json.loads(line)
                    if not isinstance(request, dict):
                        raise ValueError("request must be a JSON object")
                    response = await self.handle_request(request)
                except ValueError as e:
                    response = {"ok": False, "error": "BadRequest", "message": str(e)}
                writer.write(json.dumps(response).encode("utf-8") + b"\n")
                await writer.drain()
        except (ConnectionResetError, BrokenPipeError):
            pass
        except Exception as e:
            logger.error(f"Error in control connection: {e}")
        finally:
            writer.close()

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
        if os.path.exists(self.path):
            os.unlink(self.path)


async def control_request(
    path: str, request: Dict[str, Any], timeout: float = ACK_TIMEOUT_S + 1.0
) -> Dict[str, Any]:
    """
    Send one request line to a daemon and read the response line.

    Args:
        path: Control socket path
        request: Request object
        timeout: Seconds for connect plus response

    Returns:
        Response object

    Raises:
        DaemonUnreachable: Socket missing, refused, or silent
    """
    try:
        reader, writer = await asyncio.wait_for(
            asyncio.open_unix_connection(path, limit=MAX_LINE), timeout=timeout
        )
    except (OSError, asyncio.TimeoutError) as e:
        raise DaemonUnreachable(f"control socket {path}: {e}")

    try:
        writer.write(json.dumps(request).encode("utf-8") + b"\n")
        await writer.drain()
        line = await asyncio.wait_for(reader.readline(), timeout=timeout)
    except (OSError, asyncio.TimeoutError) as e:
        raise DaemonUnreachable(f"control socket {path}: {e}")
    finally:
        writer.close()

    if not line:
        raise DaemonUnreachable(f"control socket {path} closed without a response")
    return json.loads(line)


async def fetch_status(path: str, timeout: float = 2.0) -> StatusSnapshot:
    """StatusSnapshot from a running daemon."""
    response = await control_request(path, {"cmd": "status"}, timeout=timeout)
    return StatusSnapshot(**response["status"])

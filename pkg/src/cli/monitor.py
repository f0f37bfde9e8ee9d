"""
Read-only terminal status view.

Polls the daemon's status endpoint and the shared mask file, and renders
one table per refresh: green Online, yellow starting or stopping, red
Offline or in backoff. The only accepted input is the quit key.
"""

import asyncio
import json
import logging
import os
import sys
from typing import Optional, TextIO, Tuple

from src.core.exceptions import DaemonUnreachable, MaskError
from src.core.mask import PhysicalMask, format_mask_binary, format_mask_hex
from src.events.control import fetch_status
from src.schemas.status import DeviceState, StatusSnapshot
from src.workers.mask_publisher import read_mask

logger = logging.getLogger(__name__)

RESET = "\033[0m"
BOLD = "\033[1m"
GREEN = "\033[32m"
YELLOW = "\033[33m"
RED = "\033[31m"
CLEAR = "\033[2J\033[H"

STATE_COLORS = {
    DeviceState.ONLINE: GREEN,
    DeviceState.ATTACHED_STARTING: YELLOW,
    DeviceState.DETACHING: YELLOW,
    DeviceState.OFFLINE: RED,
    DeviceState.BACKOFF: RED,
}

QUIT_KEYS = ("q", "Q")


def use_color(stream: TextIO) -> bool:
    """Colors only on a terminal, and never when NO_COLOR is set."""
    return hasattr(stream, "isatty") and stream.isatty() and "NO_COLOR" not in os.environ


def _paint(text: str, color: str, enabled: bool) -> str:
    return f"{color}{text}{RESET}" if enabled else text


def render_snapshot(
    snapshot: StatusSnapshot,
    mask: Optional[PhysicalMask] = None,
    color: bool = False,
    log_lines: int = 8,
) -> str:
    """
    Render one refresh.

    Args:
        snapshot: Daemon status (rows and mask from one epoch)
        mask: Latest shared-file record, if readable
        color: ANSI colors for states
        log_lines: Trailing transition lines to show

    Returns:
        Text ending in a newline; identical input gives identical text
    """
    online = sum(1 for row in snapshot.devices if row.state == DeviceState.ONLINE)
    lines = [
        f"mask {format_mask_hex(snapshot.mask, snapshot.device_count)} "
        f"{format_mask_binary(snapshot.mask, snapshot.device_count)} "
        f"seq {snapshot.sequence} online {online}/{snapshot.device_count}"
    ]
    if mask is not None:
        lines.append(
            f"file {format_mask_hex(mask.mask, mask.device_count)} "
            f"{format_mask_binary(mask.mask, mask.device_count)} seq {mask.sequence}"
        )
    else:
        lines.append("file unavailable")
    lines.append("")
    header = f"{'NAME':<20} {'BIT':>3}  {'STATE':<17} {'ATTACHED':<8} {'RESTARTS':>8}"
    lines.append(_paint(header, BOLD, color))
    for row in snapshot.devices:
        state = _paint(f"{row.state.value:<17}", STATE_COLORS.get(row.state, ""), color)
        attached = "yes" if row.attached else "no"
        suffix = "  failed" if row.failed else ""
        lines.append(
            f"{row.name:<20} {row.bit:>3}  {state} {attached:<8} {row.restart_count:>8}{suffix}"
        )
    if log_lines > 0:
        lines.append("")
        lines.append("log:")
        for entry in snapshot.recent_log[-log_lines:]:
            lines.append(f"  {entry}")
    return "\n".join(lines) + "\n"


def render_unreachable(error: Exception, color: bool = False) -> str:
    return _paint(f"DAEMON UNREACHABLE: {error}", RED + BOLD, color) + "\n"


def _read_file_mask(mask_path: Optional[str]) -> Optional[PhysicalMask]:
    if not mask_path:
        return None
    try:
        return read_mask(mask_path)
    except MaskError as e:
        logger.debug(f"Mask file not readable: {e}")
        return None


async def snapshot_once(
    control_socket: str, mask_path: Optional[str]
) -> Tuple[StatusSnapshot, Optional[PhysicalMask]]:
    """
    Raises:
        DaemonUnreachable: Control socket missing or silent
    """
    snapshot = await fetch_status(control_socket)
    return snapshot, _read_file_mask(mask_path)


class QuitKey:
    """Watches stdin for the quit key in cbreak mode."""

    def __init__(self, stream: TextIO = sys.stdin):
        self.stream = stream
        self.pressed = asyncio.Event()
        self._saved = None

    def __enter__(self) -> "QuitKey":
        if not (hasattr(self.stream, "isatty") and self.stream.isatty()):
            return self
        import termios
        import tty

        fd = self.stream.fileno()
        self._saved = termios.tcgetattr(fd)
        tty.setcbreak(fd)
        asyncio.get_running_loop().add_reader(fd, self._on_input)
        return self

    def _on_input(self) -> None:
        if self.stream.read(1) in QUIT_KEYS:
            self.pressed.set()

    def __exit__(self, *exc) -> None:
        if self._saved is None:
            return
        import termios

        fd = self.stream.fileno()
        asyncio.get_running_loop().remove_reader(fd)
        termios.tcsetattr(fd, termios.TCSADRAIN, self._saved)
        self._saved = None


async def monitor(
    control_socket: str,
    mask_path: Optional[str] = None,
    interval: float = 0.5,
    once: bool = False,
    plain: bool = False,
    as_json: bool = False,
    out: TextIO = sys.stdout,
) -> int:
    """
    Run the status view.

    Args:
        control_socket: Daemon control socket
        mask_path: Shared mask file (shown next to the daemon's word)
        interval: Seconds between refreshes
        once: Print one snapshot and exit
        plain: No colors and no screen clearing
        as_json: One JSON object per snapshot
        out: Output stream

    Returns:
        Exit code (3 when the daemon is unreachable in --once mode)
    """
    color = not plain and not as_json and use_color(out)
    if once:
        try:
            snapshot, mask = await snapshot_once(control_socket, mask_path)
        except DaemonUnreachable as e:
            sys.stderr.write(render_unreachable(e))
            return 3
        out.write(_format(snapshot, mask, color, as_json))
        return 0

    with QuitKey() as quit_key:
        while not quit_key.pressed.is_set():
            try:
                snapshot, mask = await snapshot_once(control_socket, mask_path)
                text = _format(snapshot, mask, color, as_json)
            except DaemonUnreachable as e:
                text = render_unreachable(e, color)
            if color:
                text = CLEAR + text
            out.write(text)
            out.flush()
            try:
                await asyncio.wait_for(quit_key.pressed.wait(), timeout=interval)
            except asyncio.TimeoutError:
                pass
    return 0


def _format(snapshot: StatusSnapshot, mask: Optional[PhysicalMask], color: bool, as_json: bool) -> str:
    if as_json:
        payload = snapshot.model_dump(mode="json")
        payload["file_mask"] = mask.model_dump(mode="json") if mask is not None else None
        return json.dumps(payload, sort_keys=True) + "\n"
    return render_snapshot(snapshot, mask, color)

"""
OS hot-plug adapter (Linux udev via pyudev).

Translates usb_device add/remove notifications into HotplugEvents and
feeds them into the EventBus from pyudev's observer thread.
"""

import asyncio
import logging
from typing import Any, Mapping, Optional

from src.core.exceptions import UnsupportedPlatform
from src.events.bus import EventBus
from src.schemas.device import DeviceIdentity
from src.schemas.events import EventKind, HotplugEvent
from src.utils.clock import Clock, monotonic_clock

logger = logging.getLogger(__name__)

try:
    import pyudev
except ImportError:  # non-Linux platforms
    pyudev = None

_ACTIONS = {"add": EventKind.ATTACH, "remove": EventKind.DETACH}


def identity_from_properties(properties: Mapping[str, Any]) -> Optional[DeviceIdentity]:
    """
    Extract vid/pid/serial from udev device properties.

    Remove events may lack ID_VENDOR_ID/ID_MODEL_ID; PRODUCT
    ("vvvv/pppp/bcd", unpadded hex) is used as a fallback.

    Returns:
        DeviceIdentity, or None if no usable vid/pid is present
    """
    vid = properties.get("ID_VENDOR_ID")
    pid = properties.get("ID_MODEL_ID")
    if not (vid and pid):
        product = properties.get("PRODUCT", "")
        parts = product.split("/")
        if len(parts) >= 2:
            vid, pid = parts[0], parts[1]
    if not (vid and pid):
        return None
    try:
        return DeviceIdentity(vid=vid, pid=pid, serial=properties.get("ID_SERIAL_SHORT"))
    except ValueError:
        return None


def event_from_udev(
    action: str, properties: Mapping[str, Any], device_path: Optional[str], timestamp_ns: int
) -> Optional[HotplugEvent]:
    """HotplugEvent for a udev action, or None for irrelevant actions."""
    kind = _ACTIONS.get(action)
    if kind is None:
        return None
    identity = identity_from_properties(properties)
    if identity is None:
        return None
    return HotplugEvent(
        kind=kind,
        identity=identity,
        device_path=device_path,
        timestamp_ns=timestamp_ns,
        source="udev",
    )


class UdevEventSource:
    """pyudev MonitorObserver feeding an EventBus."""

    def __init__(self, bus: EventBus, clock: Clock = monotonic_clock):
        self.bus = bus
        self.clock = clock
        self.forwarded = 0
        self._observer = None
        self._loop: Optional[asyncio.AbstractEventLoop] = None

    def start(self) -> None:
        """
        Start the observer thread.

        Must be called from the bus's event loop.

        Raises:
            UnsupportedPlatform: pyudev or netlink is not available
        """
        if pyudev is None:
            raise UnsupportedPlatform("pyudev is not installed or not supported here")
        try:
            context = pyudev.Context()
            monitor = pyudev.Monitor.from_netlink(context)
            monitor.filter_by(subsystem="usb", device_type="usb_device")
        except Exception as e:
            raise UnsupportedPlatform(f"udev monitor unavailable: {e}")

        self._loop = asyncio.get_running_loop()
        self._observer = pyudev.MonitorObserver(monitor, callback=self._on_device, name="rapid-udev")
        self._observer.start()
        logger.info("Listening for udev usb_device events")

    def _on_device(self, device) -> None:
        try:
            event = event_from_udev(
                device.action, dict(device.properties), device.sys_path, self.clock.now_ns()
            )
        except Exception as e:
            logger.error(f"Error translating udev event: {e}")
            return
        if event is None or self._loop is None:
            return
        self.forwarded += 1
        self.bus.inject_threadsafe(self._loop, event)

    def stop(self) -> None:
        if self._observer is not None:
            self._observer.stop()
            self._observer = None


def subscribe_os_events(bus: EventBus, clock: Clock = monotonic_clock) -> UdevEventSource:
    """
    Start forwarding OS hot-plug events into `bus`.

    Raises:
        UnsupportedPlatform: No hot-plug facility; callers keep serving
            injected events only
    """
    source = UdevEventSource(bus, clock)
    source.start()
    return source

"""
Test configuration and fixtures.
"""

import shutil
import tempfile
from pathlib import Path

import pytest

from src.core.registry import Registry, load_registry
from src.schemas.device import DeviceIdentity
from src.schemas.events import EventKind, HotplugEvent
from src.utils.clock import SimulatedClock
from src.workers.launcher import SimulatedLauncher
from src.workers.supervisor import Supervisor, SupervisorConfig

GOLDEN_DIR = Path(__file__).parent / "unit" / "golden"

EXAMPLE_REGISTRY = """\
[device.cam_wrist]
vid = "0x046d"
pid = "0x0825"
serial = "CAMW001"
node = "camera_publisher"
topic = "/rapid/camera/wrist"
shape = [4, 4]
kind = "camera"

[device.tac_left]
vid = "0x1234"
pid = "0x5678"
serial = "TACL001"
node = "tactile_publisher"
topic = "/rapid/tactile/left"
on_detach = "tactile_cleanup"
shape = [16]
kind = "tactile"

[device.motor_grip]
vid = "0x2a2b"
pid = "0x0001"
node = "motor_publisher"
topic = "/rapid/motor/grip"
shape = [3]
kind = "motor"
"""


@pytest.fixture
def registry_text() -> str:
    """Three-device registration file (two exact ids, one model id)."""
    return EXAMPLE_REGISTRY


@pytest.fixture
def registry() -> Registry:
    """Loaded example registry: cam_wrist=0, tac_left=1, motor_grip=2."""
    return load_registry(EXAMPLE_REGISTRY)


@pytest.fixture
def clock() -> SimulatedClock:
    """Manually advanced clock starting at t=1000 s."""
    return SimulatedClock(start=1000.0)


@pytest.fixture
def launcher() -> SimulatedLauncher:
    """In-process launcher recording spawns and cleanups."""
    return SimulatedLauncher()


@pytest.fixture
def supervisor(registry, launcher, clock) -> Supervisor:
    """Supervisor with default timing on the simulated clock."""
    return Supervisor(registry, launcher, SupervisorConfig(), clock)


@pytest.fixture
def sock_dir():
    """Short directory for unix sockets (sun_path is limited to 108 bytes)."""
    path = tempfile.mkdtemp(prefix="rapid-", dir="/tmp")
    yield Path(path)
    shutil.rmtree(path, ignore_errors=True)


def make_event(kind: str, vid: int, pid: int, serial=None, timestamp_ns: int = 0) -> HotplugEvent:
    """Build a HotplugEvent from plain values."""
    return HotplugEvent(
        kind=EventKind(kind),
        identity=DeviceIdentity(vid=vid, pid=pid, serial=serial),
        timestamp_ns=timestamp_ns,
    )


CAM = dict(vid=0x046D, pid=0x0825, serial="CAMW001")
TAC = dict(vid=0x1234, pid=0x5678, serial="TACL001")
MOTOR = dict(vid=0x2A2B, pid=0x0001)

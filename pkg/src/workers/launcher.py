"""
Child process launchers used by the supervisor.

ProcessGroupLauncher starts each on_attach command as a real OS process
leading its own process group, so signals reach every descendant.
SimulatedLauncher hands out in-process stand-ins with the same interface
for deterministic runs on a simulated clock.
"""

import itertools
import logging
import os
import shlex
import signal
import subprocess
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Set

from src.core.exceptions import SpawnFailure
from src.schemas.device import DeviceDescriptor

logger = logging.getLogger(__name__)


class ChildHandle(Protocol):
    """A supervised child (process group leader)."""

    pid: int

    def poll(self) -> Optional[int]:
        """Exit code once the leader has exited, else None."""

    def group_alive(self) -> bool:
        """True while any member of the child's process group remains."""

    def signal_group(self, sig: int) -> None:
        """Deliver `sig` to the whole process group."""


class Launcher(Protocol):
    """Starts on_attach children and on_detach cleanups."""

    def spawn(self, descriptor: DeviceDescriptor) -> ChildHandle:
        """Start the descriptor's on_attach command."""

    def run_cleanup(self, descriptor: DeviceDescriptor) -> Optional[ChildHandle]:
        """Start the descriptor's on_detach command, if any."""


class ProcessHandle:
    """ChildHandle over subprocess.Popen started with a new session."""

    def __init__(self, proc: subprocess.Popen):
        self.proc = proc
        self.pid = proc.pid

    def poll(self) -> Optional[int]:
        return self.proc.poll()

    def group_alive(self) -> bool:
        try:
            os.killpg(self.pid, 0)
        except ProcessLookupError:
            return False
        except PermissionError:
            return True
        return True

    def signal_group(self, sig: int) -> None:
        try:
            os.killpg(self.pid, sig)
        except ProcessLookupError:
            pass
        except PermissionError as e:
            logger.error(f"Cannot signal process group {self.pid}: {e}")


class ProcessGroupLauncher:
    """Launch children as OS processes in their own process groups."""

    def __init__(self, extra_env: Optional[Mapping[str, str]] = None):
        """
        Initialize launcher.

        Args:
            extra_env: Variables added to every child's environment
                (heartbeat socket, broker endpoint, ...)
        """
        self.extra_env = dict(extra_env or {})

    def _environment(self, descriptor: DeviceDescriptor) -> Dict[str, str]:
        env = dict(os.environ)
        env.update(self.extra_env)
        env["RAPID_DEVICE"] = descriptor.name
        env["RAPID_TOPIC"] = descriptor.topic
        return env

    def _popen(self, descriptor: DeviceDescriptor, command: str) -> ProcessHandle:
        try:
            argv = shlex.split(command)
        except ValueError as e:
            raise SpawnFailure(f"{descriptor.name}: cannot parse command {command!r}: {e}")
        if not argv:
            raise SpawnFailure(f"{descriptor.name}: empty command")

        try:
            proc = subprocess.Popen(
                argv,
                env=self._environment(descriptor),
                stdin=subprocess.DEVNULL,
                start_new_session=True,
            )
        except OSError as e:
            raise SpawnFailure(f"{descriptor.name}: cannot start {argv[0]}: {e}")
        return ProcessHandle(proc)

    def spawn(self, descriptor: DeviceDescriptor) -> ProcessHandle:
        """
        Start the on_attach command.

        Raises:
            SpawnFailure: If the command cannot be started
        """
        handle = self._popen(descriptor, descriptor.on_attach)
        logger.info(f"Spawned {descriptor.name} (pid {handle.pid}): {descriptor.on_attach}")
        return handle

    def run_cleanup(self, descriptor: DeviceDescriptor) -> Optional[ProcessHandle]:
        """Start the on_detach command; failures are logged, not raised."""
        if not descriptor.on_detach:
            return None
        try:
            handle = self._popen(descriptor, descriptor.on_detach)
        except SpawnFailure as e:
            logger.error(f"on_detach failed: {e}")
            return None
        logger.info(f"Started on_detach for {descriptor.name} (pid {handle.pid})")
        return handle


class SimulatedChild:
    """In-process child with scripted reactions to signals."""

    def __init__(self, pid: int, name: str, ignore_term: bool = False):
        self.pid = pid
        self.name = name
        self.ignore_term = ignore_term
        self.exit_code: Optional[int] = None
        self.signals: List[int] = []

    def poll(self) -> Optional[int]:
        return self.exit_code

    def group_alive(self) -> bool:
        return self.exit_code is None

    def signal_group(self, sig: int) -> None:
        self.signals.append(sig)
        if self.exit_code is not None:
            return
        if sig == signal.SIGKILL:
            self.exit_code = -signal.SIGKILL
        elif sig == signal.SIGTERM and not self.ignore_term:
            self.exit_code = 0

    def crash(self, code: int = 1) -> None:
        """Exit on its own, as a crashing publisher would."""
        if self.exit_code is None:
            self.exit_code = code

    @property
    def alive(self) -> bool:
        return self.exit_code is None


class SimulatedLauncher:
    """Launcher producing SimulatedChild handles."""

    def __init__(
        self,
        ignore_term: Optional[Set[str]] = None,
        fail_spawn: Optional[Set[str]] = None,
        on_spawn: Optional[Callable[[DeviceDescriptor, SimulatedChild], None]] = None,
        hold_cleanups: bool = False,
    ):
        """
        Initialize simulated launcher.

        Args:
            ignore_term: Device names whose children ignore SIGTERM
            fail_spawn: Device names whose spawn raises SpawnFailure
            on_spawn: Called with every new child (lets harnesses drive it)
            hold_cleanups: Keep on_detach children running until they are
                crashed or signalled (they exit at once otherwise)
        """
        self.ignore_term = set(ignore_term or ())
        self.fail_spawn = set(fail_spawn or ())
        self.on_spawn = on_spawn
        self.hold_cleanups = hold_cleanups
        self.spawned: List[SimulatedChild] = []
        self.cleanups: List[str] = []
        self.cleanup_children: List[SimulatedChild] = []
        self._pids = itertools.count(10_000)

    def spawn(self, descriptor: DeviceDescriptor) -> SimulatedChild:
        if descriptor.name in self.fail_spawn:
            raise SpawnFailure(f"{descriptor.name}: simulated spawn failure")
        child = SimulatedChild(
            next(self._pids), descriptor.name, ignore_term=descriptor.name in self.ignore_term
        )
        self.spawned.append(child)
        if self.on_spawn is not None:
            self.on_spawn(descriptor, child)
        return child

    def run_cleanup(self, descriptor: DeviceDescriptor) -> Optional[SimulatedChild]:
        if not descriptor.on_detach:
            return None
        self.cleanups.append(descriptor.name)
        child = SimulatedChild(next(self._pids), descriptor.name)
        if not self.hold_cleanups:
            child.exit_code = 0
        self.cleanup_children.append(child)
        return child

    def children_of(self, name: str) -> List[SimulatedChild]:
        """Every child spawned for `name`, oldest first."""
        return [c for c in self.spawned if c.name == name]

    def live_children(self) -> List[SimulatedChild]:
        return [c for c in self.spawned if c.alive]

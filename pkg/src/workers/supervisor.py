"""
Device lifecycle supervisor.

Owns one DeviceRuntime per registered descriptor and drives it through
Offline -> AttachedStarting -> Online, with Backoff after crashes and
Detaching during termination. All timing reads an injected Clock, and
every time-based transition happens in tick(), so identical event and
clock traces give identical transition logs.

The presence word (bit i set iff the device with bit i is Online) is
recomputed after every transition and published as an immutable tuple
that the mask writer thread reads without locking.
"""

import logging
import signal
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, FrozenSet, List, Optional, Tuple

from pydantic import BaseModel, Field

from src.core.config import Settings, settings
from src.core.exceptions import SpawnFailure
from src.core.registry import Registry, match_device
from src.events.bus import EventBus
from src.schemas.device import DeviceDescriptor, DeviceIdentity
from src.schemas.events import EventKind, EventOutcome, HotplugEvent
from src.schemas.status import DeviceState, DeviceStatus, StatusSnapshot, TerminationReport
from src.utils.clock import Clock, monotonic_clock
from src.utils.rate_limiter import CrashWindow, ExponentialBackoff
from src.workers.launcher import ChildHandle, Launcher

logger = logging.getLogger(__name__)

TRANSITION_LOG_SIZE = 500


class SupervisorConfig(BaseModel):
    """Lifecycle timing."""

    cooldown: float = Field(2.0, ge=0, description="Seconds after detach before respawn")
    grace: float = Field(5.0, ge=0, description="Seconds between SIGTERM and SIGKILL")
    backoff_base: float = Field(1.0, gt=0)
    backoff_max_attempts: int = Field(5, ge=1)
    backoff_window: float = Field(60.0, gt=0, description="Crash-free seconds that reset the count")
    heartbeat_interval: float = Field(1.0, gt=0)
    heartbeat_misses_fatal: int = Field(3, ge=1)
    startup_timeout: float = Field(10.0, gt=0, description="Seconds to first heartbeat")
    tick_interval: float = Field(0.002, gt=0)

    @classmethod
    def from_settings(cls, config: Settings = settings) -> "SupervisorConfig":
        return cls(
            cooldown=config.SUPERVISOR_COOLDOWN_S,
            grace=config.SUPERVISOR_GRACE_S,
            backoff_base=config.SUPERVISOR_BACKOFF_BASE_S,
            backoff_max_attempts=config.SUPERVISOR_BACKOFF_MAX_ATTEMPTS,
            backoff_window=config.SUPERVISOR_BACKOFF_WINDOW_S,
            heartbeat_interval=config.HEARTBEAT_INTERVAL_S,
            heartbeat_misses_fatal=config.HEARTBEAT_MISSES_FATAL,
            tick_interval=config.SUPERVISOR_TICK_MS / 1000.0,
        )

    @property
    def heartbeat_deadline(self) -> float:
        """Silence after which an Online child counts as failed."""
        return self.heartbeat_interval * self.heartbeat_misses_fatal


@dataclass
class DeviceRuntime:
    """Mutable lifecycle state of one registered device."""

    descriptor: DeviceDescriptor
    crashes: CrashWindow
    state: DeviceState = DeviceState.OFFLINE
    attached: bool = False
    identity: Optional[DeviceIdentity] = None
    device_path: Optional[str] = None
    process: Optional[ChildHandle] = None
    restart_count: int = 0
    failed: bool = False
    backoff_deadline: Optional[float] = None
    pending_attach_at: Optional[float] = None
    detached_at: Optional[float] = None
    spawned_at: Optional[float] = None
    last_heartbeat: Optional[float] = None
    term_started_at: Optional[float] = None
    term_killed: bool = False
    last_termination: Optional[TerminationReport] = None
    first_online_at: List[float] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.descriptor.name

    @property
    def bit(self) -> int:
        return self.descriptor.bit


class Supervisor:
    """Per-device lifecycle state machine and presence owner."""

    def __init__(
        self,
        registry: Registry,
        launcher: Launcher,
        config: Optional[SupervisorConfig] = None,
        clock: Clock = monotonic_clock,
    ):
        """
        Initialize supervisor.

        Args:
            registry: Loaded registry (fixed for the run)
            launcher: Starts children and on_detach cleanups
            config: Lifecycle timing
            clock: Time source for every timing decision
        """
        self.registry = registry
        self.launcher = launcher
        self.config = config or SupervisorConfig()
        self.clock = clock
        self.backoff = ExponentialBackoff(self.config.backoff_base, self.config.backoff_max_attempts)
        self.runtimes: Dict[str, DeviceRuntime] = {
            d.name: DeviceRuntime(descriptor=d, crashes=CrashWindow(self.config.backoff_window))
            for d in registry
        }
        self.transitions: Deque[str] = deque(maxlen=TRANSITION_LOG_SIZE)
        self.transition_count = 0
        self.spawn_times: Dict[str, List[float]] = {name: [] for name in self.runtimes}
        self._reaping: List[ChildHandle] = []
        self._cleanups: List[ChildHandle] = []
        self._presence: Tuple[int, int] = (0, len(registry))
        self.running = False

    # Presence

    def presence_word(self) -> Tuple[int, int]:
        """
        Current (mask word, device_count) snapshot.

        Safe to call from any thread.
        """
        return self._presence

    def _refresh_presence(self) -> None:
        word = 0
        for rt in self.runtimes.values():
            if rt.state == DeviceState.ONLINE:
                word |= 1 << rt.bit
        self._presence = (word, len(self.registry))

    def _transition(self, rt: DeviceRuntime, new_state: DeviceState, reason: str) -> None:
        old_state = rt.state
        rt.state = new_state
        self.transition_count += 1
        line = (
            f"{self.clock.now():.3f} {rt.name}: {old_state.value} -> {new_state.value} ({reason})"
        )
        self.transitions.append(line)
        logger.info(line)
        if new_state == DeviceState.ONLINE:
            rt.first_online_at.append(self.clock.now())
        self._refresh_presence()

    # Queries

    def runtime(self, name: str) -> DeviceRuntime:
        """Runtime by device name (KeyError if unregistered)."""
        return self.runtimes[name]

    def state_of(self, name: str) -> DeviceState:
        return self.runtimes[name].state

    def occupied(self) -> FrozenSet[str]:
        """Model descriptors currently bound to an attached device."""
        return frozenset(
            rt.name for rt in self.runtimes.values() if rt.attached and not rt.descriptor.has_serial
        )

    def status_snapshot(self, sequence: int = 0, log_lines: int = 20) -> StatusSnapshot:
        """
        Rows and presence word from the same epoch.

        Args:
            sequence: Latest mask sequence, as published
            log_lines: Number of recent transition lines to include
        """
        word, count = self._presence
        rows = [
            DeviceStatus(
                name=rt.name,
                bit=rt.bit,
                state=rt.state,
                attached=rt.attached,
                restart_count=rt.restart_count,
                failed=rt.failed,
                pid=rt.process.pid if rt.process is not None else None,
            )
            for rt in sorted(self.runtimes.values(), key=lambda r: r.bit)
        ]
        recent = list(self.transitions)[-log_lines:] if log_lines > 0 else []
        return StatusSnapshot(
            devices=rows, mask=word, device_count=count, sequence=sequence, recent_log=recent
        )

    # Events

    def handle_event(self, event: HotplugEvent) -> EventOutcome:
        """
        Apply one hot-plug event.

        Args:
            event: Attach or Detach

        Returns:
            EventOutcome naming the matched device and its resulting state
        """
        if event.kind == EventKind.ATTACH:
            return self._handle_attach(event)
        return self._handle_detach(event)

    def _outcome(self, event: HotplugEvent, rt: Optional[DeviceRuntime], message: str) -> EventOutcome:
        return EventOutcome(
            kind=event.kind,
            identity=event.identity,
            matched=rt is not None,
            device=rt.name if rt else None,
            state=rt.state.value if rt else None,
            message=message,
        )

    def _handle_attach(self, event: HotplugEvent) -> EventOutcome:
        now = self.clock.now()
        descriptor = match_device(event.identity, self.registry, self.occupied())

        if descriptor is None:
            for rt in self.runtimes.values():
                d = rt.descriptor
                if (
                    not d.has_serial
                    and d.identity.vid == event.identity.vid
                    and d.identity.pid == event.identity.pid
                ):
                    logger.warning(
                        f"Ignoring {event.identity}: model entry {d.name} is already bound"
                    )
                    return self._outcome(event, None, f"NoMatch: {d.name} already bound")
            logger.warning(f"Unmatched device {event.identity}; ignoring")
            return self._outcome(event, None, "NoMatch")

        rt = self.runtimes[descriptor.name]
        if rt.attached:
            logger.warning(f"Duplicate attach for {rt.name} ({event.identity}); ignoring")
            return self._outcome(event, rt, "already attached")

        rt.attached = True
        rt.identity = event.identity
        rt.device_path = event.device_path
        rt.failed = False

        cooldown_until = (rt.detached_at + self.config.cooldown) if rt.detached_at is not None else now
        if rt.state == DeviceState.DETACHING or now < cooldown_until:
            rt.pending_attach_at = max(cooldown_until, now)
            logger.info(f"{rt.name}: attach deferred until cooldown ends at {rt.pending_attach_at:.3f}")
            return self._outcome(event, rt, "deferred (cooldown)")

        self._spawn(rt, "attach")
        return self._outcome(event, rt, "attached")

    def _find_detach_target(self, event: HotplugEvent) -> Optional[DeviceRuntime]:
        """
        Attached runtime a detach refers to.

        Matches the device path recorded at attach first, then the full
        identity. Remove notifications often carry no serial; those fall back
        to the attached device with the same vid and pid.
        """
        by_bit = sorted(self.runtimes.values(), key=lambda r: r.bit)
        attached = [rt for rt in by_bit if rt.attached]
        if event.device_path is not None:
            for rt in attached:
                if rt.device_path == event.device_path:
                    return rt
        for rt in attached:
            if rt.identity == event.identity:
                return rt
        if event.identity.serial is None:
            for rt in attached:
                if (
                    rt.identity is not None
                    and rt.identity.vid == event.identity.vid
                    and rt.identity.pid == event.identity.pid
                ):
                    return rt
        return None

    def _handle_detach(self, event: HotplugEvent) -> EventOutcome:
        rt = self._find_detach_target(event)
        if rt is None:
            logger.warning(f"Orphan detach for {event.identity}; no attached device matches")
            return self._outcome(event, None, "orphan detach")

        now = self.clock.now()
        rt.attached = False
        rt.identity = None
        rt.device_path = None
        rt.pending_attach_at = None
        rt.backoff_deadline = None
        rt.detached_at = now
        rt.failed = False
        rt.crashes.reset()
        rt.restart_count = 0

        if rt.process is not None and rt.state != DeviceState.DETACHING:
            self._begin_termination(rt, "detach")
        elif rt.state == DeviceState.DETACHING:
            self._refresh_presence()
        else:
            if rt.state != DeviceState.OFFLINE:
                self._transition(rt, DeviceState.OFFLINE, "detach")
            self._start_cleanup(rt)
        return self._outcome(event, rt, "detached")

    # Process lifecycle

    def _spawn(self, rt: DeviceRuntime, reason: str) -> None:
        rt.pending_attach_at = None
        rt.backoff_deadline = None
        try:
            rt.process = self.launcher.spawn(rt.descriptor)
        except SpawnFailure as e:
            logger.error(f"Spawn failed for {rt.name}: {e}")
            rt.process = None
            self.spawn_times[rt.name].append(self.clock.now())
            self._after_failure(rt, "spawn failure")
            return

        now = self.clock.now()
        self.spawn_times[rt.name].append(now)
        rt.spawned_at = now
        rt.last_heartbeat = None
        self._transition(rt, DeviceState.ATTACHED_STARTING, reason)

    def _begin_termination(self, rt: DeviceRuntime, reason: str) -> None:
        rt.term_started_at = self.clock.now()
        rt.term_killed = False
        if rt.process is not None:
            rt.process.signal_group(signal.SIGTERM)
        self._transition(rt, DeviceState.DETACHING, reason)

    def _finish_termination(self, rt: DeviceRuntime) -> None:
        now = self.clock.now()
        started = rt.term_started_at if rt.term_started_at is not None else now
        exit_code = rt.process.poll() if rt.process is not None else None
        self._start_cleanup(rt)
        rt.last_termination = TerminationReport(
            name=rt.name,
            graceful=not rt.term_killed,
            duration=max(0.0, now - started),
            exit_code=exit_code,
            on_detach_ran=bool(rt.descriptor.on_detach),
        )
        logger.info(
            f"{rt.name}: terminated ({'graceful' if not rt.term_killed else 'forced'}, "
            f"{rt.last_termination.duration:.3f} s)"
        )
        rt.process = None
        rt.term_started_at = None
        rt.term_killed = False
        self._transition(rt, DeviceState.OFFLINE, "terminated")

    def _start_cleanup(self, rt: DeviceRuntime) -> None:
        handle = self.launcher.run_cleanup(rt.descriptor)
        if handle is not None:
            self._cleanups.append(handle)

    @property
    def pending_cleanups(self) -> int:
        """on_detach commands still running."""
        return len(self._cleanups)

    def _discard_process(self, rt: DeviceRuntime) -> None:
        """Kill what is left of a failed child's group and reap it later."""
        if rt.process is None:
            return
        rt.process.signal_group(signal.SIGKILL)
        self._reaping.append(rt.process)
        rt.process = None

    def handle_crash(self, name: str, exit_code: Optional[int] = None) -> None:
        """
        Route a child failure: backoff restart while attached, else Offline.

        Args:
            name: Device name
            exit_code: Child exit status, if known
        """
        rt = self.runtimes[name]
        if rt.state == DeviceState.DETACHING:
            return
        logger.warning(f"{rt.name}: child failed (exit {exit_code})")
        self._discard_process(rt)
        if not rt.attached:
            self._transition(rt, DeviceState.OFFLINE, "crash while detached")
            return
        self._after_failure(rt, f"crash exit={exit_code}")

    def _after_failure(self, rt: DeviceRuntime, reason: str) -> None:
        now = self.clock.now()
        rt.restart_count = rt.crashes.record(now)
        if self.backoff.allows(rt.restart_count):
            delay = self.backoff.delay(rt.restart_count)
            rt.backoff_deadline = now + delay
            self._transition(
                rt,
                DeviceState.BACKOFF,
                f"{reason}; restart {rt.restart_count} in {delay:g} s",
            )
        else:
            rt.failed = True
            rt.backoff_deadline = None
            logger.error(
                f"{rt.name}: {rt.restart_count} failures within "
                f"{self.config.backoff_window:g} s; giving up until re-attach"
            )
            self._transition(rt, DeviceState.OFFLINE, f"{reason}; permanent failure")

    # Heartbeats

    def on_heartbeat(
        self, name: str, seq: Optional[int] = None, group: Optional[int] = None
    ) -> None:
        """
        Record a heartbeat from a child.

        First heartbeat after spawn moves AttachedStarting to Online. A
        heartbeat naming a process group other than the current child's is
        a leftover from a previous child and is dropped.

        Args:
            name: Device name
            seq: Sender's heartbeat counter
            group: Sender's process group id, if reported
        """
        rt = self.runtimes.get(name)
        if rt is None:
            logger.warning(f"Heartbeat from unregistered device {name!r}")
            return
        if rt.process is None or rt.state not in (DeviceState.ATTACHED_STARTING, DeviceState.ONLINE):
            logger.debug(f"Ignoring heartbeat from {name} in state {rt.state.value}")
            return
        if group is not None and group != rt.process.pid:
            logger.debug(f"Ignoring stale heartbeat from {name} (group {group})")
            return
        rt.last_heartbeat = self.clock.now()
        if rt.state == DeviceState.ATTACHED_STARTING:
            self._transition(rt, DeviceState.ONLINE, "first heartbeat")

    def heartbeat_check(self) -> None:
        """Fail Online children that went silent and children that never started."""
        now = self.clock.now()
        for rt in self.runtimes.values():
            if rt.state == DeviceState.ONLINE and rt.last_heartbeat is not None:
                if now - rt.last_heartbeat >= self.config.heartbeat_deadline:
                    logger.warning(
                        f"{rt.name}: missed {self.config.heartbeat_misses_fatal} heartbeats"
                    )
                    self.handle_crash(rt.name, None)
            elif rt.state == DeviceState.ATTACHED_STARTING and rt.spawned_at is not None:
                if now - rt.spawned_at >= self.config.startup_timeout:
                    logger.warning(f"{rt.name}: no heartbeat within startup timeout")
                    self.handle_crash(rt.name, None)

    # Time

    def tick(self) -> None:
        """Apply every time- and exit-driven transition due now."""
        now = self.clock.now()
        self._reaping = [h for h in self._reaping if h.poll() is None or h.group_alive()]
        self._cleanups = [h for h in self._cleanups if h.poll() is None]

        for rt in self.runtimes.values():
            if rt.state in (DeviceState.ATTACHED_STARTING, DeviceState.ONLINE) and rt.process:
                exit_code = rt.process.poll()
                if exit_code is not None:
                    self.handle_crash(rt.name, exit_code)

            if rt.state == DeviceState.DETACHING:
                process = rt.process
                if process is None or (process.poll() is not None and not process.group_alive()):
                    self._finish_termination(rt)
                elif (
                    not rt.term_killed
                    and rt.term_started_at is not None
                    and now - rt.term_started_at >= self.config.grace
                ):
                    logger.warning(f"{rt.name}: grace period expired; sending SIGKILL")
                    process.signal_group(signal.SIGKILL)
                    rt.term_killed = True
                elif process.poll() is not None and rt.term_killed:
                    # Leader gone after SIGKILL; stragglers get the same signal
                    process.signal_group(signal.SIGKILL)

            if (
                rt.state == DeviceState.OFFLINE
                and rt.attached
                and rt.pending_attach_at is not None
                and now >= rt.pending_attach_at
            ):
                self._spawn(rt, "attach after cooldown")

            if (
                rt.state == DeviceState.BACKOFF
                and rt.backoff_deadline is not None
                and now >= rt.backoff_deadline
            ):
                self._spawn(rt, f"restart {rt.restart_count}")

            if rt.crashes.expire(now):
                rt.restart_count = 0

        self.heartbeat_check()

    async def terminate_gracefully(self, name: str) -> TerminationReport:
        """
        Terminate a device's child: SIGTERM to the group, SIGKILL after grace.

        Args:
            name: Device name

        Returns:
            TerminationReport (graceful, duration)
        """
        rt = self.runtimes[name]
        if rt.process is None and rt.state != DeviceState.DETACHING:
            return TerminationReport(name=name, graceful=True, duration=0.0)
        if rt.state != DeviceState.DETACHING:
            rt.pending_attach_at = None
            rt.backoff_deadline = None
            self._begin_termination(rt, "terminate")
        while rt.state == DeviceState.DETACHING:
            await self.clock.sleep(self.config.tick_interval)
            self.tick()
        assert rt.last_termination is not None
        return rt.last_termination

    async def shutdown(self) -> List[TerminationReport]:
        """Terminate every live child concurrently and wait for all of them."""
        self.running = False
        for rt in self.runtimes.values():
            rt.pending_attach_at = None
            rt.backoff_deadline = None
            if rt.process is not None and rt.state != DeviceState.DETACHING:
                self._begin_termination(rt, "shutdown")
            elif rt.state == DeviceState.BACKOFF:
                self._transition(rt, DeviceState.OFFLINE, "shutdown")
        terminating = [rt for rt in self.runtimes.values() if rt.state == DeviceState.DETACHING]
        while any(rt.state == DeviceState.DETACHING for rt in self.runtimes.values()):
            await self.clock.sleep(self.config.tick_interval)
            self.tick()
        reports = [rt.last_termination for rt in terminating if rt.last_termination is not None]
        for handle in self._reaping:
            handle.signal_group(signal.SIGKILL)
        logger.info(f"Supervisor shut down ({len(reports)} children terminated)")
        return reports

    # Loop

    def drain(self, bus: EventBus) -> int:
        """Handle every queued event; returns how many were handled."""
        handled = 0
        while True:
            pending = bus.get_nowait()
            if pending is None:
                return handled
            try:
                outcome = self.handle_event(pending.event)
            except Exception as e:
                logger.error(f"Error handling {pending.event.kind.value} event: {e}")
                outcome = EventOutcome(
                    kind=pending.event.kind, identity=pending.event.identity, message=f"error: {e}"
                )
            pending.resolve(outcome)
            handled += 1

    async def run(self, bus: EventBus) -> None:
        """Consume the bus and tick until stop() or bus closure."""
        self.running = True
        logger.info(f"Supervisor started for {len(self.runtimes)} devices")
        while self.running:
            try:
                self.drain(bus)
                self.tick()
            except Exception as e:
                logger.error(f"Error in supervisor loop: {e}")
            if bus.closed and bus.qsize() == 0:
                break
            await self.clock.sleep(self.config.tick_interval)

    def stop(self) -> None:
        self.running = False


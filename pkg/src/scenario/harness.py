"""
Scenario harness for runtime modality changes.

Simulated mode (default) runs the real EventBus, Supervisor and
Synchronizer on a SimulatedClock in 2 ms steps, with in-process sensors
that heartbeat and publish deterministic frames once their process has
"started". Live mode drives a running daemon through its control socket
and consumes the broker's streams.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

from src.core.exceptions import (
    ConnectFailure,
    DaemonUnreachable,
    HarnessError,
    MaskError,
    PipelineAborted,
)
from src.core.mask import PhysicalMask, decode_mask
from src.core.registry import Registry, load_registry
from src.devices.payloads import PayloadKind, encode_payload, generate_frame
from src.events.bus import EventBus
from src.events.control import control_request, fetch_status
from src.scenario.consumers import MaskAwareConsumer, StaticConfigConsumer
from src.schemas.device import DeviceDescriptor
from src.schemas.events import EventKind, HotplugEvent
from src.schemas.scenario import (
    Condition,
    ConsumerMode,
    PresenceChange,
    ScenarioOutcome,
    ScenarioSpec,
    ScenarioStatus,
    TimelineEvent,
)
from src.sync.observation import SyncedObservation, channel_specs
from src.sync.synchronizer import Synchronizer
from src.transport.client import Disconnected, subscribe
from src.transport.wire import MASK_TOPIC
from src.utils.clock import SimulatedClock, monotonic_clock
from src.workers.launcher import SimulatedChild, SimulatedLauncher
from src.workers.supervisor import Supervisor, SupervisorConfig

logger = logging.getLogger(__name__)

SCENARIO_REGISTRY_TOML = """\
[device.cam_wrist]
vid = "0x2b03"
pid = "0xf580"
serial = "CAMW001"
node = "rapid-vsensor --kind camera --rate 30 --shape 8x8x3"
topic = "/rapid/cam_wrist"
shape = [8, 8, 3]
rate_hz = 30.0
kind = "camera"

[device.tactile_left]
vid = "0x1234"
pid = "0x5678"
serial = "TACL001"
node = "rapid-vsensor --kind tactile --rate 30 --shape 16x16 --contact-frame 30"
topic = "/rapid/tactile_left"
shape = [16, 16]
rate_hz = 30.0
kind = "tactile"

[device.motor_grip]
vid = "0x0483"
pid = "0x5740"
serial = "MOTG001"
node = "rapid-vsensor --kind motor --rate 60 --shape 6"
topic = "/rapid/motor_grip"
shape = [6]
rate_hz = 60.0
kind = "motor"
"""

TACTILE = "tactile_left"
STEP_S = 0.002
STARTUP_DELAY_S = 0.8
HEARTBEAT_PERIOD_S = 1.0
PHASE_STEP_S = 0.005
UNPLUG_AT_S = 3.0
REPLUG_AT_S = 5.0
DEGRADED_FRACTION = 0.5
LIVE_LATENESS_NS = 150_000_000


def scenario_registry() -> Registry:
    """Wrist camera, tactile fingertip and gripper motor."""
    return load_registry(SCENARIO_REGISTRY_TOML)


def build_spec(
    condition: Union[Condition, str],
    mode: Union[ConsumerMode, str],
    duration_s: float = 10.0,
    unplug_at: float = UNPLUG_AT_S,
    replug_at: float = REPLUG_AT_S,
    registry: Optional[Registry] = None,
    required: str = TACTILE,
) -> ScenarioSpec:
    """
    Timeline for one grid cell.

    Every device is attached at start except the required one under
    NoTactile; HotUnplug detaches it at `unplug_at`, HotReplug also
    re-attaches it at `replug_at`.
    """
    condition = Condition(condition)
    registry = registry or scenario_registry()
    timeline = [
        TimelineEvent(offset_s=0.0, kind=EventKind.ATTACH, device=name)
        for name in registry.names
        if not (condition is Condition.NO_TACTILE and name == required)
    ]
    if condition in (Condition.HOT_UNPLUG, Condition.HOT_REPLUG):
        timeline.append(TimelineEvent(offset_s=unplug_at, kind=EventKind.DETACH, device=required))
    if condition is Condition.HOT_REPLUG:
        timeline.append(TimelineEvent(offset_s=replug_at, kind=EventKind.ATTACH, device=required))
    return ScenarioSpec(
        condition=condition,
        mode=ConsumerMode(mode),
        timeline=timeline,
        duration_s=duration_s,
        required=required,
    )


class ObservationLedger:
    """Feeds observations to the consumer and keeps the outcome statistics."""

    def __init__(self, spec: ScenarioSpec, clock_origin_ns: int):
        self.spec = spec
        self.origin_ns = clock_origin_ns
        self.consumer = (
            MaskAwareConsumer(spec.required)
            if spec.mode is ConsumerMode.MASK_AWARE
            else StaticConfigConsumer(spec.required)
        )
        self.emitted = 0
        self.absent: Dict[str, int] = {}
        self.last_presence: Dict[str, bool] = {}
        self.changes: List[PresenceChange] = []
        self.last_t_ref: Optional[int] = None
        self.max_gap_ns = 0
        self.crashed_at: Optional[float] = None
        self.crash_reason: Optional[str] = None

    def feed(self, obs: SyncedObservation) -> None:
        """
        Raises:
            PipelineAborted: Static-config consumer lost an expected sensor
        """
        t_s = (obs.t_ref - self.origin_ns) / 1e9
        try:
            self.consumer.consume(obs)
        except PipelineAborted as e:
            self.crashed_at = t_s
            self.crash_reason = str(e)
            logger.warning(f"Consumer aborted at {t_s:.3f}s: {e}")
            raise

        self.emitted += 1
        if self.last_t_ref is not None:
            self.max_gap_ns = max(self.max_gap_ns, obs.t_ref - self.last_t_ref)
        self.last_t_ref = obs.t_ref
        for name, sample in obs.channels.items():
            if not sample.present:
                self.absent[name] = self.absent.get(name, 0) + 1
            if self.last_presence.get(name) != sample.present:
                change = PresenceChange(t_s=round(t_s, 6), channel=name, present=sample.present)
                self.changes.append(change)
                self.last_presence[name] = sample.present

    def outcome(self, transitions: List[str]) -> ScenarioOutcome:
        fractions = {
            name: (self.absent.get(name, 0) / self.emitted if self.emitted else 1.0)
            for name in self.last_presence
        }
        if self.crashed_at is not None:
            status = ScenarioStatus.CRASH
        elif fractions.get(self.spec.required, 1.0) > DEGRADED_FRACTION:
            status = ScenarioStatus.DEGRADED
        else:
            status = ScenarioStatus.NORMAL
        return ScenarioOutcome(
            condition=self.spec.condition,
            mode=self.spec.mode,
            status=status,
            observations_emitted=self.emitted,
            zero_filled_fraction=fractions,
            decisions=dict(self.consumer.decisions),
            vector_length=self.consumer.vector_length,
            max_gap_ms=self.max_gap_ns / 1e6,
            crashed_at_s=self.crashed_at,
            crash_reason=self.crash_reason,
            transition_log=transitions,
            presence_changes=self.changes,
        )


@dataclass
class _SimulatedSensor:
    descriptor: DeviceDescriptor
    child: SimulatedChild
    ready_at: float
    next_frame_at: float
    next_beat_at: float
    frames: int = 0
    beats: int = 0


class SimulatedSensorFleet:
    """In-process stand-ins for the sensor processes the supervisor spawns."""

    def __init__(self, clock: SimulatedClock, startup_delay: float = STARTUP_DELAY_S):
        self.clock = clock
        self.startup_delay = startup_delay
        self.sensors: List[_SimulatedSensor] = []

    def on_spawn(self, descriptor: DeviceDescriptor, child: SimulatedChild) -> None:
        ready = self.clock.now() + self.startup_delay
        self.sensors.append(
            _SimulatedSensor(
                descriptor=descriptor,
                child=child,
                ready_at=ready,
                next_frame_at=ready + descriptor.bit * PHASE_STEP_S,
                next_beat_at=ready,
            )
        )

    def step(self, supervisor: Supervisor, sync: Synchronizer) -> None:
        now = self.clock.now()
        now_ns = self.clock.now_ns()
        self.sensors = [s for s in self.sensors if s.child.alive]
        for sensor in self.sensors:
            d = sensor.descriptor
            if now + 1e-9 >= sensor.next_beat_at:
                sensor.beats += 1
                supervisor.on_heartbeat(d.name, sensor.beats)
                sensor.next_beat_at += HEARTBEAT_PERIOD_S
            if now + 1e-9 >= sensor.next_frame_at:
                kind = PayloadKind(d.kind or "camera")
                frame = generate_frame(kind, d.shape, d.bit, sensor.frames)
                sync.push(d.name, now_ns, encode_payload(frame))
                sensor.frames += 1
                sensor.next_frame_at += 1.0 / d.rate_hz


def _event_for(registry: Registry, item: TimelineEvent, timestamp_ns: int) -> HotplugEvent:
    descriptor = registry.get(item.device)
    if descriptor is None:
        raise HarnessError(f"timeline names unregistered device {item.device}")
    return HotplugEvent(
        kind=item.kind,
        identity=descriptor.identity,
        timestamp_ns=timestamp_ns,
        source="scenario",
    )


async def run_scenario(
    spec: ScenarioSpec,
    registry: Optional[Registry] = None,
    supervisor_config: Optional[SupervisorConfig] = None,
    window_ns: Optional[int] = None,
) -> ScenarioOutcome:
    """
    Run one scenario deterministically on a simulated clock.

    Args:
        spec: Condition, mode and timeline
        registry: Devices under test (the built-in trio by default)
        supervisor_config: Lifecycle timing (defaults: 2 s cooldown, 5 s grace)
        window_ns: Synchronizer window (settings default when None)

    Returns:
        ScenarioOutcome; a consumer abort is reported as status Crash
    """
    registry = registry or scenario_registry()
    clock = SimulatedClock()
    fleet = SimulatedSensorFleet(clock)
    launcher = SimulatedLauncher(on_spawn=fleet.on_spawn)
    config = supervisor_config or SupervisorConfig(tick_interval=STEP_S)
    supervisor = Supervisor(registry, launcher, config, clock)
    bus = EventBus()
    sync = Synchronizer(channel_specs(registry), window_ns)
    ledger = ObservationLedger(spec, clock.now_ns())

    start = clock.now()
    pending = sorted(spec.timeline, key=lambda e: e.offset_s)
    steps = int(round(spec.duration_s / STEP_S))
    sequence = 0
    logger.info(
        f"Scenario {spec.condition.value}/{spec.mode.value}: {steps} steps of {STEP_S * 1000:.0f} ms"
    )

    try:
        for _ in range(steps + 1):
            elapsed = clock.now() - start
            while pending and pending[0].offset_s <= elapsed + 1e-9:
                bus.inject(_event_for(registry, pending.pop(0), clock.now_ns()))
            supervisor.drain(bus)
            fleet.step(supervisor, sync)
            supervisor.tick()

            word, count = supervisor.presence_word()
            sequence += 1
            snapshot = PhysicalMask(
                device_count=count, mask=word, timestamp_ns=clock.now_ns(), sequence=sequence
            )
            sync.push_mask(snapshot)
            for obs in sync.poll(clock.now_ns()):
                ledger.feed(obs)
            clock.advance(STEP_S)
        for obs in sync.flush():
            ledger.feed(obs)
    except PipelineAborted:
        pass
    finally:
        await supervisor.shutdown()
        bus.close()

    outcome = ledger.outcome(list(supervisor.transitions))
    logger.info(
        f"Scenario {spec.condition.value}/{spec.mode.value}: {outcome.status.value} "
        f"after {outcome.observations_emitted} observations"
    )
    return outcome


async def run_grid(
    duration_s: float = 10.0, window_ns: Optional[int] = None
) -> List[ScenarioOutcome]:
    """Every condition under both consumer modes."""
    outcomes = []
    for mode in ConsumerMode:
        for condition in Condition:
            spec = build_spec(condition, mode, duration_s)
            outcomes.append(await run_scenario(spec, window_ns=window_ns))
    return outcomes


async def _inject_live(control_socket: str, registry: Registry, item: TimelineEvent) -> None:
    descriptor = registry.get(item.device)
    if descriptor is None:
        raise HarnessError(f"timeline names unregistered device {item.device}")
    identity = descriptor.identity
    request = {
        "kind": item.kind.value,
        "vid": f"0x{identity.vid:04x}",
        "pid": f"0x{identity.pid:04x}",
        "serial": identity.serial,
    }
    try:
        response = await control_request(control_socket, request)
    except DaemonUnreachable as e:
        raise HarnessError(f"daemon unreachable during scenario: {e}")
    logger.info(f"Injected {item.kind.value} {item.device}: {response.get('outcome', response)}")


async def run_live_scenario(
    spec: ScenarioSpec,
    registry: Registry,
    control_socket: str,
    endpoint: str,
    window_ns: Optional[int] = None,
) -> ScenarioOutcome:
    """
    Run a scenario against a running daemon in real time.

    Raises:
        HarnessError: Daemon or broker unreachable
    """
    try:
        await fetch_status(control_socket)
    except DaemonUnreachable as e:
        raise HarnessError(f"daemon unreachable: {e}")

    sync = Synchronizer(channel_specs(registry), window_ns)
    try:
        subscriber = await subscribe(endpoint, [d.topic for d in registry] + [MASK_TOPIC])
    except ConnectFailure as e:
        raise HarnessError(f"broker unreachable: {e}")

    clock = monotonic_clock
    ledger = ObservationLedger(spec, clock.now_ns())
    start = clock.now()
    pending = sorted(spec.timeline, key=lambda e: e.offset_s)
    attached = set()

    try:
        while clock.now() - start < spec.duration_s:
            while pending and pending[0].offset_s <= clock.now() - start:
                item = pending.pop(0)
                await _inject_live(control_socket, registry, item)
                if item.kind is EventKind.ATTACH:
                    attached.add(item.device)
                else:
                    attached.discard(item.device)

            item = await subscriber.recv(timeout=0.01)
            if isinstance(item, Disconnected):
                logger.info(f"Stream notice: {item.topics} ({item.reason})")
                if subscriber.closed:
                    raise HarnessError("broker closed the scenario stream")
            elif item is not None:
                if item.topic == MASK_TOPIC:
                    try:
                        sync.push_mask(decode_mask(item.payload))
                    except MaskError as e:
                        logger.warning(f"Bad mask frame: {e}")
                else:
                    sync.push_topic(item.topic, item.timestamp_ns, item.payload)
            for obs in sync.poll(clock.now_ns() - LIVE_LATENESS_NS):
                ledger.feed(obs)
    except PipelineAborted:
        pass
    finally:
        await subscriber.close()
        for name in sorted(attached):
            try:
                detach = TimelineEvent(offset_s=0, kind=EventKind.DETACH, device=name)
                await _inject_live(control_socket, registry, detach)
            except HarnessError as e:
                logger.warning(f"Cleanup detach of {name} failed: {e}")

    return ledger.outcome(await _live_transitions(control_socket))


async def _live_transitions(control_socket: str) -> List[str]:
    try:
        snapshot = await fetch_status(control_socket)
    except DaemonUnreachable:
        return []
    return snapshot.recent_log

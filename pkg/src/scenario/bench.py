"""
Mask-path benchmark.

Runs the real supervisor loop and mask writer thread against a temporary
shared file and measures, from the reader's side of the file:

    detach -> bit clear     injection until read_mask shows the bit clear
    attach -> bit set       injection until read_mask shows the bit set
    publish rate            records per second over a fixed window
    attach -> first data    (optional) real rapid-vsensor child to first frame

A stress reader thread runs during the publish window to count torn reads
and check sequence monotonicity.
"""

import asyncio
import logging
import os
import sys
import tempfile
import threading
import time
from typing import List, Optional, Tuple

import numpy as np

from src.core.exceptions import ConnectFailure, MaskError, TornRead
from src.core.registry import Registry, load_registry
from src.events.bus import EventBus
from src.schemas.events import EventKind, HotplugEvent
from src.schemas.scenario import BenchReport, LatencySummary
from src.schemas.status import DeviceState
from src.transport.broker import Broker
from src.transport.client import Disconnected, subscribe
from src.utils.clock import monotonic_clock
from src.workers.heartbeat import HeartbeatServer
from src.workers.launcher import ProcessGroupLauncher, SimulatedLauncher
from src.workers.mask_publisher import MaskChannel, MaskPublisher, read_mask
from src.workers.supervisor import Supervisor, SupervisorConfig

logger = logging.getLogger(__name__)

BENCH_DEVICE = "bench_dev"
READ_POLL_S = 0.0002
TRANSITION_TIMEOUT_S = 1.0
FIRST_DATA_TIMEOUT_S = 10.0

BENCH_REGISTRY_TOML = """\
[device.bench_dev]
vid = "0x1d6b"
pid = "0x0104"
serial = "BENCH001"
node = "true"
topic = "/rapid/bench_dev"
"""


def summarize(latencies_s: List[float]) -> LatencySummary:
    """Percentiles of a latency sample, in milliseconds."""
    if not latencies_s:
        return LatencySummary()
    ms = np.asarray(latencies_s, dtype=float) * 1000.0
    p50, p95, p99 = np.percentile(ms, [50, 95, 99])
    return LatencySummary(
        samples=int(ms.size),
        p50_ms=round(float(p50), 3),
        p95_ms=round(float(p95), 3),
        p99_ms=round(float(p99), 3),
        max_ms=round(float(ms.max()), 3),
    )


def render_bench_text(report: BenchReport) -> str:
    """Plain-text report, one stage per row."""
    lines = [
        f"{'stage':<24} {'n':>6} {'p50 ms':>9} {'p95 ms':>9} {'p99 ms':>9} {'max ms':>9}",
    ]
    stages = [
        ("detach -> bit clear", report.detach_to_clear),
        ("attach -> bit set", report.attach_to_set),
    ]
    if report.attach_to_first_data is not None:
        stages.append(("attach -> first data", report.attach_to_first_data))
    for label, s in stages:
        lines.append(
            f"{label:<24} {s.samples:>6} {s.p50_ms:>9.3f} {s.p95_ms:>9.3f} "
            f"{s.p99_ms:>9.3f} {s.max_ms:>9.3f}"
        )
    lines.append("")
    lines.append(f"transitions:        {report.transitions}")
    lines.append(
        f"mask publish rate:  {report.publish_rate_hz:.1f} Hz over {report.publish_window_s:g} s"
    )
    lines.append(f"sequence monotone:  {'yes' if report.sequence_monotone else 'NO'}")
    lines.append(f"torn reads:         {report.torn_reads}")
    return "\n".join(lines) + "\n"


class StressReader:
    """Reads the mask file in a tight loop from its own thread."""

    def __init__(self, path: str):
        self.path = path
        self.reads = 0
        self.torn = 0
        self.monotone = True
        self._last_sequence = -1
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                record = read_mask(self.path)
            except TornRead:
                self.torn += 1
                continue
            except MaskError as e:
                logger.warning(f"Stress reader: {e}")
                continue
            self.reads += 1
            if record.sequence < self._last_sequence:
                self.monotone = False
            self._last_sequence = record.sequence

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name="rapid-bench-reader", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(1.0)


def bench_registry() -> Registry:
    return load_registry(BENCH_REGISTRY_TOML)


def _event(registry: Registry, kind: EventKind, name: str = BENCH_DEVICE) -> HotplugEvent:
    descriptor = registry.get(name)
    assert descriptor is not None
    return HotplugEvent(
        kind=kind, identity=descriptor.identity, timestamp_ns=time.monotonic_ns(), source="bench"
    )


async def _await_bit(path: str, bit: int, want: bool, timeout: float) -> Optional[float]:
    """Seconds until the shared file shows `bit` == `want`; None on timeout."""
    start = time.perf_counter()
    while True:
        try:
            if read_mask(path).is_set(bit) == want:
                return time.perf_counter() - start
        except TornRead:
            pass
        if time.perf_counter() - start > timeout:
            return None
        await asyncio.sleep(READ_POLL_S)


async def _await_state(supervisor: Supervisor, name: str, state: DeviceState, timeout: float) -> bool:
    deadline = time.perf_counter() + timeout
    while supervisor.state_of(name) != state:
        if time.perf_counter() > deadline:
            return False
        await asyncio.sleep(READ_POLL_S)
    return True


async def _measure_transitions(
    supervisor: Supervisor, bus: EventBus, registry: Registry, path: str, transitions: int
) -> Tuple[List[float], List[float]]:
    bit = registry.bit_map()[BENCH_DEVICE]
    to_clear: List[float] = []
    to_set: List[float] = []
    for i in range(transitions):
        if i % 2 == 0:
            bus.inject(_event(registry, EventKind.ATTACH))
            latency = await _await_bit(path, bit, True, TRANSITION_TIMEOUT_S)
            if latency is not None:
                to_set.append(latency)
            else:
                logger.warning(f"Transition {i}: bit never set")
        else:
            bus.inject(_event(registry, EventKind.DETACH))
            latency = await _await_bit(path, bit, False, TRANSITION_TIMEOUT_S)
            if latency is not None:
                to_clear.append(latency)
            else:
                logger.warning(f"Transition {i}: bit never cleared")
            await _await_state(supervisor, BENCH_DEVICE, DeviceState.OFFLINE, TRANSITION_TIMEOUT_S)
    if supervisor.runtime(BENCH_DEVICE).attached:
        bus.inject(_event(registry, EventKind.DETACH))
        await _await_state(supervisor, BENCH_DEVICE, DeviceState.OFFLINE, TRANSITION_TIMEOUT_S)
    return to_clear, to_set


async def _measure_publish_rate(path: str, window_s: float) -> Tuple[float, StressReader]:
    reader = StressReader(path)
    reader.start()
    try:
        first = read_mask(path)
        await asyncio.sleep(window_s)
        last = read_mask(path)
    finally:
        reader.stop()
    elapsed = (last.timestamp_ns - first.timestamp_ns) / 1e9
    rate = (last.sequence - first.sequence) / elapsed if elapsed > 0 else 0.0
    if last.sequence <= first.sequence:
        reader.monotone = False
    return rate, reader


async def bench_first_data(trials: int = 5, workdir: Optional[str] = None) -> LatencySummary:
    """
    Attach -> first data latency with real rapid-vsensor children.

    Each trial injects an Attach, waits for the first frame on the
    device's topic through a broker, then detaches.

    Args:
        trials: Attach/detach cycles
        workdir: Directory for the heartbeat socket (temporary by default)

    Raises:
        ConnectFailure: Broker could not be bound or subscribed
    """
    with tempfile.TemporaryDirectory(prefix="rapid-bench-", dir=workdir) as tmp:
        registry = load_registry(
            BENCH_REGISTRY_TOML.replace(
                'node = "true"',
                f'node = "{sys.executable} -m src.devices.virtual_sensor --kind camera --rate 30"',
            )
        )
        broker = Broker("127.0.0.1:0")
        await broker.start()
        heartbeat_path = os.path.join(tmp, "hb.sock")
        launcher = ProcessGroupLauncher(
            extra_env={"RAPID_BIND": broker.endpoint, "RAPID_HEARTBEAT_SOCKET": heartbeat_path}
        )
        supervisor = Supervisor(registry, launcher, SupervisorConfig(cooldown=0.0, grace=2.0))
        heartbeats = HeartbeatServer(heartbeat_path, supervisor.on_heartbeat)
        await heartbeats.start()
        bus = EventBus()
        loop_task = asyncio.create_task(supervisor.run(bus))
        descriptor = registry.get(BENCH_DEVICE)
        assert descriptor is not None
        subscriber = await subscribe(broker.endpoint, [descriptor.topic])
        latencies: List[float] = []
        try:
            for trial in range(trials):
                bus.inject(_event(registry, EventKind.ATTACH))
                start = time.perf_counter()
                deadline = start + FIRST_DATA_TIMEOUT_S
                while time.perf_counter() < deadline:
                    item = await subscriber.recv(timeout=0.05)
                    if item is not None and not isinstance(item, Disconnected):
                        latencies.append(time.perf_counter() - start)
                        break
                else:
                    logger.warning(f"Trial {trial}: no data within {FIRST_DATA_TIMEOUT_S:g} s")
                bus.inject(_event(registry, EventKind.DETACH))
                await _await_state(supervisor, BENCH_DEVICE, DeviceState.OFFLINE, 5.0)
                while await subscriber.recv(timeout=0.05) is not None:
                    pass
        finally:
            await subscriber.close()
            await supervisor.shutdown()
            bus.close()
            await loop_task
            await heartbeats.stop()
            await broker.stop()
    return summarize(latencies)


async def bench_mask_path(
    transitions: int = 1000,
    publish_window_s: float = 10.0,
    publish_interval_s: float = 0.002,
    with_sensors: bool = False,
    sensor_trials: int = 5,
    workdir: Optional[str] = None,
) -> BenchReport:
    """
    Measure the mask path end to end.

    Args:
        transitions: Alternating attach/detach injections (starts with attach)
        publish_window_s: Window for the publish-rate and stress-reader stage
        publish_interval_s: Mask writer period
        with_sensors: Also measure attach -> first data with real children
        sensor_trials: Attach cycles for the first-data stage
        workdir: Directory for the temporary mask file

    Returns:
        BenchReport
    """
    registry = bench_registry()
    with tempfile.TemporaryDirectory(prefix="rapid-bench-", dir=workdir) as tmp:
        path = os.path.join(tmp, "rapid_hardware_mask")
        launcher = SimulatedLauncher()
        supervisor = Supervisor(registry, launcher, SupervisorConfig(cooldown=0.0), monotonic_clock)
        loop = asyncio.get_running_loop()
        # Simulated children report ready on the next loop iteration
        launcher.on_spawn = lambda descriptor, child: loop.call_soon(
            supervisor.on_heartbeat, descriptor.name, None, child.pid
        )
        publisher = MaskPublisher(
            MaskChannel(path=path, publish_interval=publish_interval_s, debug_interval=3600.0),
            supervisor.presence_word,
        )
        publisher.start()
        bus = EventBus()
        loop_task = asyncio.create_task(supervisor.run(bus))
        logger.info(f"Benchmark: {transitions} transitions, {publish_window_s:g} s publish window")
        try:
            to_clear, to_set = await _measure_transitions(supervisor, bus, registry, path, transitions)
            rate, reader = await _measure_publish_rate(path, publish_window_s)
        finally:
            supervisor.stop()
            bus.close()
            await loop_task
            await supervisor.shutdown()
            publisher.stop()

    first_data: Optional[LatencySummary] = None
    if with_sensors:
        try:
            first_data = await bench_first_data(sensor_trials, workdir)
        except ConnectFailure as e:
            logger.error(f"First-data stage skipped: {e}")

    report = BenchReport(
        transitions=transitions,
        detach_to_clear=summarize(to_clear),
        attach_to_set=summarize(to_set),
        publish_rate_hz=round(rate, 1),
        publish_window_s=publish_window_s,
        sequence_monotone=reader.monotone,
        torn_reads=reader.torn,
        attach_to_first_data=first_data,
    )
    logger.info(
        f"Benchmark done: detach->clear p99 {report.detach_to_clear.p99_ms:.2f} ms, "
        f"publish {report.publish_rate_hz:.0f} Hz"
    )
    return report

"""
Unit tests for the device lifecycle supervisor.
"""

import asyncio
import signal

import pytest

from src.core.registry import load_registry
from src.events.bus import EventBus
from src.events.udev_monitor import event_from_udev
from src.schemas.status import DeviceState
from src.utils.clock import SimulatedClock
from src.utils.rate_limiter import CrashWindow, ExponentialBackoff
from src.workers.launcher import SimulatedLauncher
from src.workers.supervisor import Supervisor, SupervisorConfig
from tests.conftest import CAM, EXAMPLE_REGISTRY, MOTOR, TAC, make_event


def bring_online(supervisor, name, identity):
    """Attach a device and deliver its first heartbeat."""
    supervisor.handle_event(make_event("attach", **identity))
    supervisor.on_heartbeat(name, 1)
    assert supervisor.state_of(name) == DeviceState.ONLINE


class TestAttach:
    """Test attach handling and presence."""

    def test_attach_starts_child(self, supervisor, launcher):
        """Attach spawns the on_attach command and enters AttachedStarting."""
        outcome = supervisor.handle_event(make_event("attach", **TAC))
        assert outcome.matched
        assert outcome.device == "tac_left"
        assert outcome.state == "AttachedStarting"
        assert len(launcher.children_of("tac_left")) == 1

    def test_bit_set_only_when_online(self, supervisor):
        """The presence bit follows the first heartbeat, not the attach."""
        supervisor.handle_event(make_event("attach", **TAC))
        assert supervisor.presence_word() == (0, 3)
        supervisor.on_heartbeat("tac_left", 1)
        assert supervisor.presence_word() == (0b010, 3)

    def test_unmatched_attach(self, supervisor, launcher):
        """Unknown hardware is ignored."""
        outcome = supervisor.handle_event(make_event("attach", vid=0xDEAD, pid=0xBEEF))
        assert not outcome.matched
        assert outcome.message == "NoMatch"
        assert launcher.spawned == []

    def test_second_device_of_bound_model(self, supervisor, launcher):
        """A second instance of a model entry is not bound."""
        supervisor.handle_event(make_event("attach", **MOTOR, serial="M1"))
        outcome = supervisor.handle_event(make_event("attach", **MOTOR, serial="M2"))
        assert not outcome.matched
        assert "already bound" in outcome.message
        assert len(launcher.children_of("motor_grip")) == 1

    def test_duplicate_attach(self, supervisor, launcher):
        """A repeated attach for an attached device changes nothing."""
        supervisor.handle_event(make_event("attach", **CAM))
        outcome = supervisor.handle_event(make_event("attach", **CAM))
        assert outcome.message == "already attached"
        assert len(launcher.children_of("cam_wrist")) == 1

    def test_heartbeat_from_unknown_device(self, supervisor):
        """Heartbeats for unregistered names are dropped."""
        supervisor.on_heartbeat("ghost", 1)
        assert supervisor.presence_word() == (0, 3)

    def test_status_snapshot(self, supervisor):
        """Snapshot rows and mask come from one epoch."""
        bring_online(supervisor, "cam_wrist", CAM)
        supervisor.handle_event(make_event("attach", **MOTOR))
        snapshot = supervisor.status_snapshot(sequence=42)
        assert snapshot.mask == 0b001
        assert snapshot.sequence == 42
        assert [row.state for row in snapshot.devices] == [
            DeviceState.ONLINE,
            DeviceState.OFFLINE,
            DeviceState.ATTACHED_STARTING,
        ]
        assert snapshot.device("motor_grip").attached
        assert snapshot.device("cam_wrist").pid is not None
        assert any("first heartbeat" in line for line in snapshot.recent_log)


class TestDetach:
    """Test detach, grace and cooldown."""

    def test_detach_clears_bit_and_terminates(self, supervisor, launcher):
        """Detach sends SIGTERM and clears the bit at once."""
        bring_online(supervisor, "tac_left", TAC)
        supervisor.handle_event(make_event("detach", **TAC))
        child = launcher.children_of("tac_left")[0]
        assert child.signals == [signal.SIGTERM]
        assert supervisor.state_of("tac_left") == DeviceState.DETACHING
        assert supervisor.presence_word() == (0, 3)

        supervisor.tick()
        assert supervisor.state_of("tac_left") == DeviceState.OFFLINE
        assert launcher.cleanups == ["tac_left"]
        report = supervisor.runtime("tac_left").last_termination
        assert report.graceful
        assert report.on_detach_ran

    def test_grace_period_then_sigkill(self, registry, clock):
        """A child ignoring SIGTERM is killed when the 5 s grace expires."""
        launcher = SimulatedLauncher(ignore_term={"cam_wrist"})
        supervisor = Supervisor(registry, launcher, SupervisorConfig(), clock)
        bring_online(supervisor, "cam_wrist", CAM)
        supervisor.handle_event(make_event("detach", **CAM))

        clock.advance(4.999)
        supervisor.tick()
        child = launcher.children_of("cam_wrist")[0]
        assert child.alive
        assert supervisor.state_of("cam_wrist") == DeviceState.DETACHING

        clock.advance(0.001)
        supervisor.tick()
        assert child.signals == [signal.SIGTERM, signal.SIGKILL]

        supervisor.tick()
        assert supervisor.state_of("cam_wrist") == DeviceState.OFFLINE
        report = supervisor.runtime("cam_wrist").last_termination
        assert not report.graceful
        assert report.duration == pytest.approx(5.0)

    def test_reattach_waits_for_cooldown(self, supervisor, launcher, clock):
        """Re-attach inside the 2 s cooldown is deferred, then honoured."""
        bring_online(supervisor, "tac_left", TAC)
        supervisor.handle_event(make_event("detach", **TAC))
        supervisor.tick()

        clock.advance(0.5)
        outcome = supervisor.handle_event(make_event("attach", **TAC))
        assert outcome.message == "deferred (cooldown)"
        assert len(launcher.children_of("tac_left")) == 1

        clock.advance(1.499)
        supervisor.tick()
        assert supervisor.state_of("tac_left") == DeviceState.OFFLINE

        clock.advance(0.001)
        supervisor.tick()
        assert supervisor.state_of("tac_left") == DeviceState.ATTACHED_STARTING
        spawns = supervisor.spawn_times["tac_left"]
        assert spawns[1] - spawns[0] == pytest.approx(2.0)

    def test_orphan_detach(self, supervisor):
        """Detach of a device that was never attached is reported and ignored."""
        outcome = supervisor.handle_event(make_event("detach", **TAC))
        assert not outcome.matched
        assert outcome.message == "orphan detach"

    def test_serialless_remove_clears_bit(self, supervisor):
        """A udev remove carrying only PRODUCT still detaches the attached device."""
        bring_online(supervisor, "tac_left", TAC)
        event = event_from_udev("remove", {"PRODUCT": "1234/5678/100"}, "/sys/bus/usb/1-1", 5)
        assert event.identity.serial is None

        outcome = supervisor.handle_event(event)
        assert outcome.device == "tac_left"
        assert supervisor.presence_word() == (0, 3)
        assert supervisor.state_of("tac_left") == DeviceState.DETACHING

    def test_remove_matches_recorded_path(self, supervisor):
        """The device path seen at attach identifies the remove."""
        path = "/sys/devices/pci0000:00/usb1/1-2"
        props = {"ID_VENDOR_ID": "046d", "ID_MODEL_ID": "0825", "ID_SERIAL_SHORT": "CAMW001"}
        supervisor.handle_event(event_from_udev("add", props, path, 1))
        supervisor.on_heartbeat("cam_wrist", 1)

        remove = event_from_udev("remove", {"PRODUCT": "46d/825/0"}, path, 2)
        outcome = supervisor.handle_event(remove)
        assert outcome.device == "cam_wrist"
        assert supervisor.presence_word() == (0, 3)

    def test_remove_with_other_serial_is_orphan(self, supervisor):
        """A remove naming a different serial does not detach the attached device."""
        bring_online(supervisor, "tac_left", TAC)
        outcome = supervisor.handle_event(make_event("detach", vid=0x1234, pid=0x5678, serial="X"))
        assert outcome.message == "orphan detach"
        assert supervisor.presence_word() == (0b010, 3)

    def test_cleanup_is_reaped(self, registry, clock):
        """A running on_detach command is polled until it exits."""
        launcher = SimulatedLauncher(hold_cleanups=True)
        supervisor = Supervisor(registry, launcher, SupervisorConfig(), clock)
        bring_online(supervisor, "tac_left", TAC)
        supervisor.handle_event(make_event("detach", **TAC))
        supervisor.tick()
        assert supervisor.pending_cleanups == 1

        launcher.cleanup_children[0].crash(0)
        supervisor.tick()
        assert supervisor.pending_cleanups == 0

    def test_detach_during_startup(self, supervisor, launcher):
        """A device unplugged before its first heartbeat still terminates."""
        supervisor.handle_event(make_event("attach", **MOTOR))
        supervisor.handle_event(make_event("detach", **MOTOR))
        supervisor.tick()
        assert supervisor.state_of("motor_grip") == DeviceState.OFFLINE
        assert not launcher.live_children()


class TestCrashRecovery:
    """Test backoff restarts and heartbeat supervision."""

    def test_backoff_schedule(self, supervisor, launcher, clock):
        """Crashes restart after 1, 2, 4, 8 and 16 s, then give up."""
        supervisor.handle_event(make_event("attach", **MOTOR))
        for delay in (1, 2, 4, 8, 16):
            launcher.children_of("motor_grip")[-1].crash()
            supervisor.tick()
            assert supervisor.state_of("motor_grip") == DeviceState.BACKOFF

            clock.advance(delay - 0.001)
            supervisor.tick()
            assert supervisor.state_of("motor_grip") == DeviceState.BACKOFF

            clock.advance(0.001)
            supervisor.tick()
            assert supervisor.state_of("motor_grip") == DeviceState.ATTACHED_STARTING

        spawns = supervisor.spawn_times["motor_grip"]
        assert [b - a for a, b in zip(spawns, spawns[1:])] == [1.0, 2.0, 4.0, 8.0, 16.0]

        launcher.children_of("motor_grip")[-1].crash()
        supervisor.tick()
        runtime = supervisor.runtime("motor_grip")
        assert runtime.state == DeviceState.OFFLINE
        assert runtime.failed
        assert runtime.restart_count == 6

    def test_failed_device_recovers_on_replug(self, supervisor, launcher, clock):
        """Detach and re-attach clears the permanent failure."""
        supervisor.runtime("cam_wrist").failed = True
        supervisor.handle_event(make_event("attach", **CAM))
        assert not supervisor.runtime("cam_wrist").failed
        assert supervisor.state_of("cam_wrist") == DeviceState.ATTACHED_STARTING

    def test_crash_window_resets_count(self, supervisor, launcher, clock):
        """60 s without a crash resets the restart count."""
        bring_online(supervisor, "cam_wrist", CAM)
        launcher.children_of("cam_wrist")[-1].crash()
        supervisor.tick()
        assert supervisor.runtime("cam_wrist").restart_count == 1

        for _ in range(61):
            clock.advance(1.0)
            supervisor.on_heartbeat("cam_wrist", 2)
            supervisor.tick()
        assert supervisor.state_of("cam_wrist") == DeviceState.ONLINE
        assert supervisor.runtime("cam_wrist").restart_count == 0

    def test_heartbeat_from_previous_child(self, supervisor, launcher, clock):
        """A late beat from a terminated child does not promote its successor."""
        bring_online(supervisor, "tac_left", TAC)
        supervisor.handle_event(make_event("detach", **TAC))
        supervisor.tick()
        clock.advance(2.0)
        supervisor.handle_event(make_event("attach", **TAC))
        old, new = launcher.children_of("tac_left")

        supervisor.on_heartbeat("tac_left", 9, group=old.pid)
        assert supervisor.state_of("tac_left") == DeviceState.ATTACHED_STARTING
        supervisor.on_heartbeat("tac_left", 1, group=new.pid)
        assert supervisor.state_of("tac_left") == DeviceState.ONLINE

    def test_missed_heartbeats(self, supervisor, clock):
        """Three silent heartbeat intervals count as a crash."""
        bring_online(supervisor, "cam_wrist", CAM)
        clock.advance(2.999)
        supervisor.tick()
        assert supervisor.state_of("cam_wrist") == DeviceState.ONLINE

        clock.advance(0.001)
        supervisor.tick()
        assert supervisor.state_of("cam_wrist") == DeviceState.BACKOFF
        assert supervisor.presence_word() == (0, 3)

    def test_startup_timeout(self, supervisor, clock):
        """A child that never heartbeats is failed after the startup timeout."""
        supervisor.handle_event(make_event("attach", **CAM))
        clock.advance(10.0)
        supervisor.tick()
        assert supervisor.state_of("cam_wrist") == DeviceState.BACKOFF

    def test_spawn_failure_enters_backoff(self, registry, clock):
        """A command that cannot start is retried like a crash."""
        launcher = SimulatedLauncher(fail_spawn={"tac_left"})
        supervisor = Supervisor(registry, launcher, SupervisorConfig(), clock)
        supervisor.handle_event(make_event("attach", **TAC))
        assert supervisor.state_of("tac_left") == DeviceState.BACKOFF
        assert supervisor.runtime("tac_left").restart_count == 1

    def test_crash_after_detach_goes_offline(self, supervisor, launcher):
        """A crash reported for an unattached device does not restart it."""
        bring_online(supervisor, "cam_wrist", CAM)
        supervisor.runtime("cam_wrist").attached = False
        supervisor.handle_crash("cam_wrist", 1)
        assert supervisor.state_of("cam_wrist") == DeviceState.OFFLINE


class TestDeterminism:
    """Test replayable transition logs."""

    def _trace(self):
        clock = SimulatedClock(start=0.0)
        launcher = SimulatedLauncher()
        supervisor = Supervisor(load_registry(EXAMPLE_REGISTRY), launcher, SupervisorConfig(), clock)
        supervisor.handle_event(make_event("attach", **TAC))
        supervisor.on_heartbeat("tac_left", 1)
        clock.advance(0.25)
        supervisor.handle_event(make_event("detach", **TAC))
        supervisor.tick()
        clock.advance(0.25)
        supervisor.handle_event(make_event("attach", **TAC))
        clock.advance(2.0)
        supervisor.tick()
        return list(supervisor.transitions)

    def test_identical_traces_identical_logs(self):
        """Same events on the same clock give the same transition log."""
        assert self._trace() == self._trace()


class TestAsyncLifecycle:
    """Test the event loop, termination and shutdown."""

    @pytest.mark.asyncio
    async def test_run_answers_injected_events(self, supervisor):
        """Events injected on the bus are answered with outcomes."""
        bus = EventBus()
        task = asyncio.create_task(supervisor.run(bus))
        outcome = await bus.inject(make_event("attach", **CAM))
        assert outcome.device == "cam_wrist"
        supervisor.stop()
        await task

    @pytest.mark.asyncio
    async def test_run_ends_when_bus_closes(self, supervisor):
        """Closing the bus ends the loop."""
        bus = EventBus()
        task = asyncio.create_task(supervisor.run(bus))
        bus.close()
        await asyncio.wait_for(task, timeout=1.0)

    @pytest.mark.asyncio
    async def test_terminate_gracefully(self, registry, clock):
        """terminate_gracefully reports a forced kill after the grace period."""
        launcher = SimulatedLauncher(ignore_term={"tac_left"})
        supervisor = Supervisor(registry, launcher, SupervisorConfig(), clock)
        bring_online(supervisor, "tac_left", TAC)
        report = await supervisor.terminate_gracefully("tac_left")
        assert not report.graceful
        assert 5.0 <= report.duration < 5.1

    @pytest.mark.asyncio
    async def test_terminate_idle_device(self, supervisor):
        """Terminating a device without a child is an immediate no-op."""
        report = await supervisor.terminate_gracefully("cam_wrist")
        assert report.graceful
        assert report.duration == 0.0

    @pytest.mark.asyncio
    async def test_shutdown_terminates_everything(self, registry, clock):
        """Shutdown stops every child concurrently and reports each."""
        launcher = SimulatedLauncher(ignore_term={"cam_wrist"})
        supervisor = Supervisor(registry, launcher, SupervisorConfig(), clock)
        bring_online(supervisor, "cam_wrist", CAM)
        bring_online(supervisor, "tac_left", TAC)
        reports = {r.name: r for r in await supervisor.shutdown()}
        assert reports["tac_left"].graceful
        assert not reports["cam_wrist"].graceful
        assert not launcher.live_children()
        assert supervisor.presence_word() == (0, 3)

    @pytest.mark.asyncio
    async def test_shutdown_reports_only_its_own_terminations(self, supervisor):
        """Terminations from earlier detaches are not reported again."""
        bring_online(supervisor, "tac_left", TAC)
        supervisor.handle_event(make_event("detach", **TAC))
        supervisor.tick()
        assert supervisor.runtime("tac_left").last_termination is not None

        bring_online(supervisor, "cam_wrist", CAM)
        reports = await supervisor.shutdown()
        assert [r.name for r in reports] == ["cam_wrist"]


class TestRateLimiting:
    """Test backoff and crash window helpers."""

    def test_backoff_delays(self):
        """Delays double from the base."""
        backoff = ExponentialBackoff(1.0, 5)
        assert [backoff.delay(n) for n in range(1, 6)] == [1.0, 2.0, 4.0, 8.0, 16.0]
        assert backoff.allows(5)
        assert not backoff.allows(6)

    def test_backoff_rejects_zero(self):
        """Attempt numbers start at 1."""
        with pytest.raises(ValueError):
            ExponentialBackoff(1.0, 5).delay(0)

    def test_crash_window(self):
        """The count resets after a crash-free window."""
        window = CrashWindow(60.0)
        assert window.record(0.0) == 1
        assert window.record(30.0) == 2
        assert not window.expire(89.0)
        assert window.expire(90.0)
        assert window.count == 0

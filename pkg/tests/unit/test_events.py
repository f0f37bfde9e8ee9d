"""
Unit tests for the event bus, control socket, heartbeats and udev translation.
"""

import asyncio

import pytest

from src.core.exceptions import ChannelClosed, DaemonUnreachable, EventBusOverflow
from src.events.bus import EventBus
from src.events.control import ControlServer, control_request, fetch_status, parse_event_request
from src.events.udev_monitor import event_from_udev, identity_from_properties
from src.schemas.events import EventKind
from src.schemas.status import DeviceState
from src.workers.heartbeat import HeartbeatClient, HeartbeatServer, parse_heartbeat
from src.workers.supervisor import Supervisor
from tests.conftest import CAM, TAC, make_event


class TestEventBus:
    """Test the bounded event queue."""

    @pytest.mark.asyncio
    async def test_arrival_order(self):
        """Events come out in the order they went in."""
        bus = EventBus()
        bus.inject(make_event("attach", **TAC))
        bus.inject(make_event("detach", **TAC))
        first = await bus.get()
        second = await bus.get()
        assert first.event.kind == EventKind.ATTACH
        assert second.event.kind == EventKind.DETACH

    @pytest.mark.asyncio
    async def test_overflow_is_reported(self):
        """A full queue raises instead of blocking."""
        bus = EventBus(capacity=1)
        bus.inject(make_event("attach", **TAC))
        with pytest.raises(EventBusOverflow):
            bus.inject(make_event("attach", **CAM))
        assert bus.overflows == 1

    @pytest.mark.asyncio
    async def test_closed_bus(self):
        """A closed bus rejects events and drains to None."""
        bus = EventBus()
        bus.close()
        with pytest.raises(ChannelClosed):
            bus.inject(make_event("attach", **TAC))
        assert await bus.get() is None

    @pytest.mark.asyncio
    async def test_inject_threadsafe(self):
        """Foreign threads inject through the loop."""
        bus = EventBus()
        loop = asyncio.get_running_loop()
        await loop.run_in_executor(None, bus.inject_threadsafe, loop, make_event("attach", **TAC))
        pending = await asyncio.wait_for(bus.get(), timeout=1.0)
        assert pending.event.identity.serial == "TACL001"


class TestControlSocket:
    """Test the line-JSON control socket."""

    def test_parse_event_request(self):
        """Request objects become HotplugEvents."""
        event = parse_event_request(
            {"kind": "ATTACH", "vid": "0x1234", "pid": "0x5678", "serial": "TACL001"}, 7
        )
        assert event.kind == EventKind.ATTACH
        assert event.identity.vid == 0x1234
        assert event.timestamp_ns == 7
        assert event.source == "inject"

    def test_parse_rejects_bad_requests(self):
        """Unknown kinds and bad ids are ValueErrors."""
        with pytest.raises(ValueError):
            parse_event_request({"kind": "wiggle", "vid": "1", "pid": "2"}, 0)
        with pytest.raises(ValueError):
            parse_event_request({"kind": "attach", "vid": "xyz", "pid": "2"}, 0)

    @pytest.mark.asyncio
    async def test_inject_and_status_roundtrip(self, registry, launcher, sock_dir):
        """An injected attach is answered with the supervisor outcome."""
        supervisor = Supervisor(registry, launcher)
        bus = EventBus()
        path = str(sock_dir / "control.sock")
        server = ControlServer(path, bus, supervisor.status_snapshot)
        await server.start()
        loop_task = asyncio.create_task(supervisor.run(bus))
        try:
            response = await control_request(
                path, {"kind": "attach", "vid": "0x1234", "pid": "0x5678", "serial": "TACL001"}
            )
            assert response["ok"]
            assert response["outcome"]["device"] == "tac_left"

            supervisor.on_heartbeat("tac_left", 1)
            status = await fetch_status(path)
            assert status.device("tac_left").state == DeviceState.ONLINE
            assert status.mask == 0b010

            bad = await control_request(path, {"kind": "attach", "vid": "nope", "pid": "1"})
            assert not bad["ok"]
            assert bad["error"] == "BadRequest"
        finally:
            supervisor.stop()
            await loop_task
            await server.stop()

    @pytest.mark.asyncio
    async def test_closed_bus_reported(self, supervisor, sock_dir):
        """Injecting into a closed bus is answered with ChannelClosed."""
        bus = EventBus()
        bus.close()
        server = ControlServer(str(sock_dir / "c.sock"), bus, supervisor.status_snapshot)
        response = await server.handle_request({"kind": "attach", "vid": "1", "pid": "2"})
        assert response == {
            "ok": False,
            "error": "ChannelClosed",
            "message": "event bus is closed",
        }

    @pytest.mark.asyncio
    async def test_unreachable_daemon(self, sock_dir):
        """A missing socket is DaemonUnreachable."""
        with pytest.raises(DaemonUnreachable):
            await fetch_status(str(sock_dir / "absent.sock"), timeout=0.5)


class TestHeartbeats:
    """Test the heartbeat channel."""

    def test_parse_heartbeat(self):
        """HB lines parse to (name, seq, group)."""
        assert parse_heartbeat("HB tac_left 17\n") == ("tac_left", 17, None)
        assert parse_heartbeat("HB tac_left 17 4242") == ("tac_left", 17, 4242)
        assert parse_heartbeat("HB tac_left") == ("tac_left", None, None)
        assert parse_heartbeat("HB tac_left 1 2 3") is None
        assert parse_heartbeat("HELLO tac_left 1") is None
        assert parse_heartbeat("HB tac_left x") is None

    @pytest.mark.asyncio
    async def test_client_to_server(self, sock_dir):
        """Beats from a client reach the callback in order."""
        received = []
        path = str(sock_dir / "hb.sock")
        server = HeartbeatServer(path, lambda name, seq, group: received.append((name, seq, group)))
        await server.start()
        client = HeartbeatClient(path, "cam_wrist", group=77)
        try:
            for _ in range(3):
                await client.beat()
            for _ in range(50):
                if len(received) == 3:
                    break
                await asyncio.sleep(0.01)
        finally:
            await client.close()
            await server.stop()
        assert received == [("cam_wrist", n, 77) for n in (1, 2, 3)]

    @pytest.mark.asyncio
    async def test_beat_without_server(self, sock_dir):
        """A missing daemon makes beats no-ops, not errors."""
        client = HeartbeatClient(str(sock_dir / "none.sock"), "cam_wrist")
        await client.beat()
        assert client.seq == 1


class TestUdevTranslation:
    """Test udev property translation."""

    def test_add_event(self):
        """add with ID_* properties is an attach."""
        event = event_from_udev(
            "add",
            {"ID_VENDOR_ID": "1234", "ID_MODEL_ID": "5678", "ID_SERIAL_SHORT": "TACL001"},
            "/dev/bus/usb/001/004",
            99,
        )
        assert event.kind == EventKind.ATTACH
        assert event.identity.serial == "TACL001"
        assert event.source == "udev"

    def test_remove_falls_back_to_product(self):
        """remove events without ID_* use PRODUCT."""
        identity = identity_from_properties({"PRODUCT": "46d/825/12"})
        assert (identity.vid, identity.pid, identity.serial) == (0x046D, 0x0825, None)

    def test_irrelevant_actions(self):
        """bind/change and id-less devices are dropped."""
        assert event_from_udev("bind", {"PRODUCT": "1/2/3"}, None, 0) is None
        assert event_from_udev("add", {}, None, 0) is None

    def test_empty_serial_is_absent(self):
        """An empty serial property means no serial."""
        identity = identity_from_properties(
            {"ID_VENDOR_ID": "2a2b", "ID_MODEL_ID": "0001", "ID_SERIAL_SHORT": ""}
        )
        assert identity.serial is None

"""
Unit tests for registry loading, matching and validation.
"""

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.core.exceptions import (
    BadIdentity,
    DuplicateBit,
    DuplicateName,
    DuplicateTopic,
    InvalidEntry,
    ParseError,
    TooManyDevices,
)
from src.core.registry import (
    Registry,
    load_descriptor_file,
    load_registry,
    match_device,
    serialize_registry,
    validate_registration,
)
from src.schemas.device import DeviceDescriptor, DeviceIdentity


def _table(name: str, vid: str = "0x1234", pid: str = "0x5678", serial=None, topic=None) -> str:
    lines = [f"[device.{name}]", f'vid = "{vid}"', f'pid = "{pid}"']
    if serial is not None:
        lines.append(f'serial = "{serial}"')
    lines.append('node = "publisher"')
    lines.append(f'topic = "{topic or "/rapid/" + name}"')
    return "\n".join(lines) + "\n"


class TestLoadRegistry:
    """Test loading registration files."""

    def test_bits_follow_declaration_order(self, registry):
        """Bits are assigned 0, 1, 2 in file order."""
        assert registry.names == ["cam_wrist", "tac_left", "motor_grip"]
        assert registry.bit_map() == {"cam_wrist": 0, "tac_left": 1, "motor_grip": 2}

    def test_descriptor_fields(self, registry):
        """Identity, commands, shape and kind are carried over."""
        tac = registry.get("tac_left")
        assert tac.identity == DeviceIdentity(vid=0x1234, pid=0x5678, serial="TACL001")
        assert tac.on_attach == "tactile_publisher"
        assert tac.on_detach == "tactile_cleanup"
        assert tac.topic == "/rapid/tactile/left"
        assert tac.shape == (16,)
        assert tac.kind == "tactile"

    def test_model_entry_has_no_serial(self, registry):
        """An entry without serial is a model descriptor."""
        motor = registry.get("motor_grip")
        assert motor.identity.serial is None
        assert not motor.has_serial

    def test_defaults(self):
        """shape defaults to [1] and rate_hz to 30."""
        registry = load_registry(_table("solo"))
        solo = registry.get("solo")
        assert solo.shape == (1,)
        assert solo.rate_hz == 30.0
        assert solo.on_detach is None

    def test_lookups(self, registry):
        """Lookups by bit and topic."""
        assert registry.by_bit(2).name == "motor_grip"
        assert registry.by_topic("/rapid/camera/wrist").name == "cam_wrist"
        assert registry.get("missing") is None
        assert registry.by_bit(9) is None

    def test_empty_file(self):
        """An empty file is an empty registry."""
        assert len(load_registry("")) == 0

    def test_hex_forms(self):
        """Upper-case prefix and bare hex are accepted."""
        registry = load_registry(_table("a", vid="0X1D6B", pid="104"))
        assert registry.get("a").identity.vid == 0x1D6B
        assert registry.get("a").identity.pid == 0x0104

    def test_parse_error_has_line(self):
        """Malformed syntax raises ParseError with a line number."""
        with pytest.raises(ParseError) as exc:
            load_registry('[device.a]\nvid = "0x1"\npid "0x2"\n')
        assert exc.value.line == 3

    def test_duplicate_name(self):
        """Repeating a device table raises DuplicateName at the repeat."""
        text = _table("a") + "\n" + _table("a", topic="/rapid/other")
        with pytest.raises(DuplicateName) as exc:
            load_registry(text)
        assert exc.value.line == 7

    def test_duplicate_topic(self):
        """Two devices on one topic raise DuplicateTopic."""
        text = _table("a", topic="/rapid/x") + _table("b", pid="0x9999", topic="/rapid/x")
        with pytest.raises(DuplicateTopic):
            load_registry(text)

    def test_bad_identity_points_at_key(self, registry_text):
        """A non-hex vid raises BadIdentity on the vid line."""
        text = registry_text.replace('vid = "0x1234"', 'vid = "0xZZZZ"')
        with pytest.raises(BadIdentity) as exc:
            load_registry(text)
        assert exc.value.line == 11

    def test_vid_out_of_range(self):
        """Five hex digits are not a 16-bit id."""
        with pytest.raises(BadIdentity):
            load_registry(_table("a", vid="0x12345"))

    def test_missing_required_key(self):
        """An entry without topic is invalid."""
        with pytest.raises(InvalidEntry):
            load_registry('[device.a]\nvid = "0x1"\npid = "0x2"\nnode = "n"\n')

    def test_unknown_key(self):
        """Unknown keys are rejected."""
        with pytest.raises(InvalidEntry):
            load_registry(_table("a") + 'colour = "red"\n')

    def test_too_many_devices(self):
        """65 devices do not fit the mask."""
        text = "".join(_table(f"d{i}", pid=f"0x{i:04x}") for i in range(65))
        with pytest.raises(TooManyDevices):
            load_registry(text)

    def test_sixty_four_devices_fit(self):
        """The 64th device gets bit 63."""
        text = "".join(_table(f"d{i}", pid=f"0x{i:04x}") for i in range(64))
        registry = load_registry(text)
        assert registry.get("d63").bit == 63

    def test_serialize_reloads_identically(self, registry):
        """Rendering and reloading reproduces every descriptor."""
        assert load_registry(serialize_registry(registry)).descriptors == registry.descriptors

    def test_with_descriptor_bumps_version(self, registry):
        """Adding a descriptor returns a new registry with a higher stamp."""
        extra = DeviceDescriptor(
            name="extra",
            identity=DeviceIdentity(vid=1, pid=2),
            on_attach="x",
            topic="/rapid/extra",
            bit=3,
        )
        grown = registry.with_descriptor(extra)
        assert len(grown) == 4
        assert grown.version_stamp == registry.version_stamp + 1
        assert len(registry) == 3


class TestDescriptorFile:
    """Test resolved descriptor files."""

    def test_duplicate_bit_rejected(self, registry):
        """A hand-edited file assigning one bit twice raises DuplicateBit."""
        data = {"devices": [d.model_dump(mode="json") for d in registry]}
        data["devices"][1]["bit"] = 0
        with pytest.raises(DuplicateBit):
            load_descriptor_file(json.dumps(data))

    def test_malformed_json(self):
        """Non-JSON raises ParseError."""
        with pytest.raises(ParseError):
            load_descriptor_file("{not json")


class TestMatchDevice:
    """Test two-tier identity matching."""

    def test_exact_serial_match(self, registry):
        """vid + pid + serial selects the instance entry."""
        identity = DeviceIdentity(vid=0x1234, pid=0x5678, serial="TACL001")
        assert match_device(identity, registry).name == "tac_left"

    def test_wrong_serial_does_not_match_instance(self, registry):
        """A different serial on an instance-only model is no match."""
        identity = DeviceIdentity(vid=0x1234, pid=0x5678, serial="OTHER")
        assert match_device(identity, registry) is None

    def test_model_match_ignores_serial(self, registry):
        """A model entry accepts any serial, or none."""
        assert match_device(DeviceIdentity(vid=0x2A2B, pid=1, serial="X9"), registry).name == (
            "motor_grip"
        )
        assert match_device(DeviceIdentity(vid=0x2A2B, pid=1), registry).name == "motor_grip"

    def test_occupied_model_entry_is_skipped(self, registry):
        """A second device of a bound model gets no match."""
        identity = DeviceIdentity(vid=0x2A2B, pid=1)
        assert match_device(identity, registry, frozenset({"motor_grip"})) is None

    def test_unknown_device(self, registry):
        """Unregistered vid/pid is no match."""
        assert match_device(DeviceIdentity(vid=0xFFFF, pid=0xFFFF), registry) is None

    @given(
        vid=st.integers(0, 0xFFFF),
        pid=st.integers(0, 0xFFFF),
        serial=st.text(alphabet="ABCDEF0123456789", min_size=1, max_size=8),
        other=st.text(alphabet="ghijkl", min_size=1, max_size=8),
        model_first=st.booleans(),
    )
    def test_exact_tier_wins_over_model_tier(self, vid, pid, serial, other, model_first):
        """An exact entry beats a model entry regardless of declaration order."""
        exact = _table("exact", vid=f"0x{vid:04x}", pid=f"0x{pid:04x}", serial=serial)
        model = _table("model", vid=f"0x{vid:04x}", pid=f"0x{pid:04x}")
        registry = load_registry(model + exact if model_first else exact + model)

        assert match_device(DeviceIdentity(vid=vid, pid=pid, serial=serial), registry).name == (
            "exact"
        )
        assert match_device(DeviceIdentity(vid=vid, pid=pid, serial=other), registry).name == (
            "model"
        )
        assert match_device(DeviceIdentity(vid=vid, pid=pid), registry).name == "model"


class TestValidateRegistration:
    """Test line-referenced validation reports."""

    def test_valid_file(self, registry_text):
        """A valid file reports no errors and its device count."""
        report = validate_registration(registry_text)
        assert report.ok
        assert report.device_count == 3

    def test_collects_every_error(self):
        """Validation keeps going past the first bad entry."""
        text = _table("a", vid="nope") + _table("b", topic="relative/topic")
        report = validate_registration(text)
        codes = sorted(f.code for f in report.errors)
        assert codes == ["BadIdentity", "InvalidEntry"]
        assert {f.device for f in report.errors} == {"a", "b"}

    def test_report_agrees_with_loader(self):
        """ok is False exactly when load_registry raises."""
        text = _table("a") + _table("b", pid="0x1111", topic="/rapid/a")
        report = validate_registration(text)
        assert not report.ok
        with pytest.raises(DuplicateTopic):
            load_registry(text)

    def test_finding_text(self):
        """Findings render as one readable line."""
        report = validate_registration(_table("a", vid="xyz"))
        text = str(report.errors[0])
        assert text.startswith("ERROR BadIdentity (line 2) [a]:")

    def test_empty_registry_is_valid(self):
        """No devices is not an error."""
        report = validate_registration("")
        assert report.ok
        assert report.device_count == 0

    def test_registry_is_frozen(self, registry):
        """Registries are immutable values."""
        with pytest.raises(Exception):
            registry.version_stamp = 9
        assert isinstance(registry, Registry)

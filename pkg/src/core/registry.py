"""
Device registry.

Loads the single-point registration file (TOML tables named
``device.<name>``), assigns Physical Mask bits in declaration order,
matches hot-plug identities against the catalog in two tiers, and
validates registration files into line-referenced reports.
"""

import json
import logging
import re
import tomllib
from typing import Any, Dict, FrozenSet, Iterator, List, Optional, Tuple, Type

import toml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.core.exceptions import (
    BadIdentity,
    DuplicateBit,
    DuplicateName,
    DuplicateTopic,
    InvalidEntry,
    ParseError,
    RegistryError,
    TooManyDevices,
)
from src.schemas.device import MAX_DEVICES, DeviceDescriptor, DeviceIdentity
from src.utils.validators import (
    format_hex_id,
    is_valid_device_name,
    is_valid_topic,
    parse_hex_id,
    validate_shape,
)

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ("vid", "pid", "node", "topic")
OPTIONAL_KEYS = ("serial", "on_detach", "shape", "rate_hz", "kind")

_TABLE_HEADER = re.compile(r"^\s*\[\s*device\.([^\]\s]+)\s*\]\s*(?:#.*)?$")
_ANY_HEADER = re.compile(r"^\s*\[")
_KEY_LINE = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")
_TOML_LINE = re.compile(r"line (\d+)")

_ERRORS: Dict[str, Type[RegistryError]] = {
    cls.__name__: cls
    for cls in (
        ParseError,
        InvalidEntry,
        DuplicateName,
        DuplicateTopic,
        DuplicateBit,
        TooManyDevices,
        BadIdentity,
    )
}


class Registry(BaseModel):
    """Immutable, ordered catalog of registered device modules."""

    model_config = ConfigDict(frozen=True)

    descriptors: Tuple[DeviceDescriptor, ...] = ()
    version_stamp: int = Field(0, ge=0, description="Incremented on every mutation")

    def __len__(self) -> int:
        return len(self.descriptors)

    def __iter__(self) -> Iterator[DeviceDescriptor]:  # type: ignore[override]
        return iter(self.descriptors)

    @property
    def device_count(self) -> int:
        """Number of registered devices (mask width in use)."""
        return len(self.descriptors)

    @property
    def names(self) -> List[str]:
        """Descriptor names in bit order."""
        return [d.name for d in self.descriptors]

    def get(self, name: str) -> Optional[DeviceDescriptor]:
        """Descriptor by name."""
        for descriptor in self.descriptors:
            if descriptor.name == name:
                return descriptor
        return None

    def by_bit(self, bit: int) -> Optional[DeviceDescriptor]:
        """Descriptor by mask bit."""
        for descriptor in self.descriptors:
            if descriptor.bit == bit:
                return descriptor
        return None

    def by_topic(self, topic: str) -> Optional[DeviceDescriptor]:
        """Descriptor by topic."""
        for descriptor in self.descriptors:
            if descriptor.topic == topic:
                return descriptor
        return None

    def bit_map(self) -> Dict[str, int]:
        """name -> bit, in bit order."""
        return {d.name: d.bit for d in self.descriptors}

    def with_descriptor(self, descriptor: DeviceDescriptor) -> "Registry":
        """
        Return a new registry with `descriptor` appended.

        Args:
            descriptor: Descriptor to add (its bit must be the next free one)

        Returns:
            New Registry with version_stamp incremented

        Raises:
            RegistryError: If the result would break registry invariants
        """
        candidate = Registry(
            descriptors=self.descriptors + (descriptor,), version_stamp=self.version_stamp + 1
        )
        check_registry(candidate)
        return candidate


class Finding(BaseModel):
    """One validation finding."""

    severity: str = Field("error", pattern="^(error|warning)$")
    code: str
    message: str
    line: Optional[int] = None
    device: Optional[str] = None

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line is not None else "file"
        device = f" [{self.device}]" if self.device else ""
        return f"{self.severity.upper()} {self.code} ({where}){device}: {self.message}"


class ValidationReport(BaseModel):
    """Result of validate_registration."""

    findings: List[Finding] = Field(default_factory=list)
    device_count: int = 0

    @property
    def errors(self) -> List[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self) -> List[Finding]:
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def ok(self) -> bool:
        """True iff load_registry would succeed."""
        return not self.errors


def _locate_lines(config_text: str) -> Tuple[Dict[str, int], Dict[Tuple[str, str], int]]:
    """
    Map device names to header lines and (name, key) pairs to key lines.

    Args:
        config_text: Raw registry text

    Returns:
        (header line per name, key line per (name, key)); 1-based, first occurrence
    """
    headers: Dict[str, int] = {}
    keys: Dict[Tuple[str, str], int] = {}
    current: Optional[str] = None

    for number, line in enumerate(config_text.splitlines(), start=1):
        header = _TABLE_HEADER.match(line)
        if header:
            current = header.group(1).strip('"')
            headers.setdefault(current, number)
            continue
        if _ANY_HEADER.match(line):
            current = None
            continue
        key = _KEY_LINE.match(line)
        if key and current is not None:
            keys.setdefault((current, key.group(1)), number)

    return headers, keys


def _duplicate_headers(config_text: str) -> List[Tuple[str, int]]:
    """Device tables declared more than once, with the line of the repeat."""
    seen = set()
    repeats = []
    for number, line in enumerate(config_text.splitlines(), start=1):
        header = _TABLE_HEADER.match(line)
        if not header:
            continue
        name = header.group(1).strip('"')
        if name in seen:
            repeats.append((name, number))
        seen.add(name)
    return repeats


def _collect(config_text: str) -> Tuple[List[DeviceDescriptor], List[Finding]]:
    """
    Parse registry text into descriptors, gathering every finding.

    load_registry and validate_registration both use this, so the two
    always agree on whether a file is valid.

    Args:
        config_text: Raw registry text

    Returns:
        (descriptors in declaration order, findings)
    """
    findings: List[Finding] = []

    # tomllib rejects a repeated table outright; report it by name first
    repeats = _duplicate_headers(config_text)
    if repeats:
        for name, line in repeats:
            findings.append(
                Finding(
                    code="DuplicateName",
                    message=f"device '{name}' is declared more than once",
                    line=line,
                    device=name,
                )
            )
        return [], findings

    try:
        data = tomllib.loads(config_text)
    except tomllib.TOMLDecodeError as e:
        match = _TOML_LINE.search(str(e))
        findings.append(
            Finding(code="ParseError", message=str(e), line=int(match.group(1)) if match else None)
        )
        return [], findings

    headers, key_lines = _locate_lines(config_text)

    for key in data:
        if key != "device":
            findings.append(
                Finding(code="InvalidEntry", message=f"unexpected top-level key '{key}'")
            )

    devices = data.get("device", {})
    if not isinstance(devices, dict):
        findings.append(Finding(code="ParseError", message="'device' must be a table of tables"))
        return [], findings

    if len(devices) > MAX_DEVICES:
        findings.append(
            Finding(
                code="TooManyDevices",
                message=f"{len(devices)} devices declared; the mask tracks at most {MAX_DEVICES}",
            )
        )

    descriptors: List[DeviceDescriptor] = []
    topics: Dict[str, str] = {}

    for bit, (name, entry) in enumerate(devices.items()):
        header_line = headers.get(name)

        def fail(code: str, message: str, key: Optional[str] = None) -> None:
            line = key_lines.get((name, key), header_line) if key else header_line
            findings.append(Finding(code=code, message=message, line=line, device=name))

        if not isinstance(entry, dict):
            fail("InvalidEntry", "device entry must be a table")
            continue
        if not is_valid_device_name(name):
            fail("InvalidEntry", f"invalid device name '{name}'")

        entry_ok = True
        for key in REQUIRED_KEYS:
            if key not in entry:
                fail("InvalidEntry", f"missing required key '{key}'")
                entry_ok = False
        for key in entry:
            if key not in REQUIRED_KEYS and key not in OPTIONAL_KEYS:
                fail("InvalidEntry", f"unknown key '{key}'", key)
                entry_ok = False
        if not entry_ok:
            continue

        identity_fields: Dict[str, Any] = {}
        for key in ("vid", "pid"):
            try:
                identity_fields[key] = parse_hex_id(str(entry[key]))
            except ValueError:
                fail("BadIdentity", f"{key} {entry[key]!r} is not a 16-bit hex id", key)
                entry_ok = False

        topic = entry["topic"]
        if not isinstance(topic, str) or not is_valid_topic(topic):
            fail("InvalidEntry", f"invalid topic {topic!r}", "topic")
            entry_ok = False
        elif topic in topics:
            fail("DuplicateTopic", f"topic '{topic}' already used by '{topics[topic]}'", "topic")
            entry_ok = False
        else:
            topics[topic] = name

        shape = entry.get("shape", [1])
        try:
            shape = validate_shape(shape if isinstance(shape, list) else [shape])
        except ValueError as e:
            fail("InvalidEntry", str(e), "shape")
            entry_ok = False

        for key in ("node", "on_detach", "serial", "kind"):
            if key in entry and not isinstance(entry[key], str):
                fail("InvalidEntry", f"'{key}' must be a string", key)
                entry_ok = False

        if not entry_ok or bit >= MAX_DEVICES:
            continue

        try:
            descriptors.append(
                DeviceDescriptor(
                    name=name,
                    identity=DeviceIdentity(serial=entry.get("serial"), **identity_fields),
                    on_attach=entry["node"],
                    on_detach=entry.get("on_detach"),
                    topic=topic,
                    bit=bit,
                    shape=shape,
                    rate_hz=entry.get("rate_hz", 30.0),
                    kind=entry.get("kind"),
                )
            )
        except ValidationError as e:
            fail("InvalidEntry", e.errors()[0]["msg"])

    return descriptors, findings


def _raise_first(findings: List[Finding]) -> None:
    """Raise the first error finding as its exception class."""
    for finding in findings:
        if finding.severity == "error":
            raise _ERRORS.get(finding.code, InvalidEntry)(finding.message, line=finding.line)


def check_registry(registry: Registry) -> None:
    """
    Check collective invariants: unique names, bits and topics, at most 64.

    Args:
        registry: Registry to check

    Raises:
        RegistryError: On the first violated invariant
    """
    if len(registry) > MAX_DEVICES:
        raise TooManyDevices(f"{len(registry)} devices; at most {MAX_DEVICES}")
    names, bits, topics = set(), set(), set()
    for descriptor in registry:
        if descriptor.name in names:
            raise DuplicateName(f"device '{descriptor.name}' is declared more than once")
        if descriptor.bit in bits:
            raise DuplicateBit(f"bit {descriptor.bit} assigned twice ('{descriptor.name}')")
        if descriptor.topic in topics:
            raise DuplicateTopic(f"topic '{descriptor.topic}' used twice")
        names.add(descriptor.name)
        bits.add(descriptor.bit)
        topics.add(descriptor.topic)


def load_registry(config_text: str) -> Registry:
    """
    Load a registry from registration-file text.

    Args:
        config_text: TOML text with ``[device.<name>]`` tables

    Returns:
        Registry with bits assigned in declaration order

    Raises:
        RegistryError: ParseError, InvalidEntry, DuplicateName, DuplicateTopic,
            TooManyDevices or BadIdentity
    """
    descriptors, findings = _collect(config_text)
    _raise_first(findings)
    registry = Registry(descriptors=tuple(descriptors))
    logger.debug(f"Loaded registry with {len(registry)} devices: {registry.names}")
    return registry


def validate_registration(config_text: str) -> ValidationReport:
    """
    Validate registration-file text without raising.

    Args:
        config_text: TOML text with ``[device.<name>]`` tables

    Returns:
        ValidationReport whose errors are empty iff load_registry succeeds
    """
    descriptors, findings = _collect(config_text)
    return ValidationReport(findings=findings, device_count=len(descriptors))


def match_device(
    identity: DeviceIdentity,
    registry: Registry,
    occupied: FrozenSet[str] = frozenset(),
) -> Optional[DeviceDescriptor]:
    """
    Two-tier identity matching.

    Pass 1 returns the descriptor matching vid + pid + serial exactly.
    Pass 2 returns the first serial-less descriptor with matching vid + pid
    that is not already bound to a live device.

    Args:
        identity: Identity reported by the event source
        registry: Registry to match against
        occupied: Names of model descriptors already bound to a device

    Returns:
        Matching descriptor or None
    """
    if identity.serial is not None:
        for descriptor in registry:
            candidate = descriptor.identity
            if (
                candidate.serial is not None
                and candidate.vid == identity.vid
                and candidate.pid == identity.pid
                and candidate.serial == identity.serial
            ):
                return descriptor

    for descriptor in registry:
        candidate = descriptor.identity
        if (
            candidate.serial is None
            and candidate.vid == identity.vid
            and candidate.pid == identity.pid
            and descriptor.name not in occupied
        ):
            return descriptor

    return None


def serialize_registry(registry: Registry) -> str:
    """
    Render a registry back to registration-file text.

    load_registry(serialize_registry(r)) reproduces r's descriptors.

    Args:
        registry: Registry to render

    Returns:
        TOML text
    """
    devices: Dict[str, Dict[str, Any]] = {}
    for descriptor in registry:
        entry: Dict[str, Any] = {
            "vid": format_hex_id(descriptor.identity.vid),
            "pid": format_hex_id(descriptor.identity.pid),
        }
        if descriptor.identity.serial is not None:
            entry["serial"] = descriptor.identity.serial
        entry["node"] = descriptor.on_attach
        entry["topic"] = descriptor.topic
        if descriptor.on_detach is not None:
            entry["on_detach"] = descriptor.on_detach
        entry["shape"] = list(descriptor.shape)
        entry["rate_hz"] = descriptor.rate_hz
        if descriptor.kind is not None:
            entry["kind"] = descriptor.kind
        devices[descriptor.name] = entry

    if not devices:
        return ""
    return toml.dumps({"device": devices})


def load_descriptor_file(json_text: str) -> Registry:
    """
    Load a resolved descriptor file (JSON written by ``rapidctl register``).

    Unlike registration files, descriptor files carry explicit bits, so a
    hand-edited file can assign one bit twice; that is rejected here.

    Args:
        json_text: Descriptor file content

    Returns:
        Registry

    Raises:
        ParseError: If the JSON or a descriptor is malformed
        RegistryError: If collective invariants fail
    """
    try:
        data = json.loads(json_text)
        descriptors = tuple(DeviceDescriptor(**entry) for entry in data["devices"])
    except (ValueError, KeyError, TypeError, ValidationError) as e:
        raise ParseError(f"invalid descriptor file: {e}")
    registry = Registry(descriptors=descriptors, version_stamp=int(data.get("version_stamp", 0)))
    check_registry(registry)
    return registry

"""
Exception hierarchy for the RAPID device middleware.

Every failure the system reports by name has a class here so callers can
catch by family (RegistryError, MaskError, ...) or by exact kind.
"""

from typing import Optional


class RapidError(Exception):
    """Base class for all middleware errors."""


# Registry


class RegistryError(RapidError):
    """Registry file could not be turned into a valid Registry."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.line = line

    def __str__(self) -> str:
        if self.line is not None:
            return f"line {self.line}: {self.message}"
        return self.message


class ParseError(RegistryError):
    """Malformed registry syntax."""


class InvalidEntry(RegistryError):
    """A device table is missing a required key or has a bad value."""


class DuplicateName(RegistryError):
    """Two descriptors share a name."""


class DuplicateTopic(RegistryError):
    """Two descriptors share a topic."""


class DuplicateBit(RegistryError):
    """Two descriptors share a mask bit (hand-edited descriptor files)."""


class TooManyDevices(RegistryError):
    """More descriptors than the 64-bit mask can track."""


class BadIdentity(RegistryError):
    """vid or pid is not a 16-bit hex number."""


# Physical Mask


class MaskError(RapidError):
    """Physical Mask encode/decode/publish failure."""


class InvariantViolation(MaskError):
    """PhysicalMask value breaks its own invariants."""


class BadMagic(MaskError):
    """Record does not start with the RAPD magic."""


class UnsupportedVersion(MaskError):
    """Record carries a protocol version other than 1."""


class ShortBuffer(MaskError):
    """Fewer than 32 bytes available."""


class RegistryMismatch(MaskError):
    """Mask device_count disagrees with the registry size."""


class MaskUnavailable(MaskError):
    """Shared mask file does not exist."""


class TornRead(MaskError):
    """No two consecutive reads agreed within the retry budget."""


class MaskIoError(MaskError):
    """Shared mask file could not be written."""


# Event bus


class EventBusError(RapidError):
    """Event source failure."""


class ChannelClosed(EventBusError):
    """Event bus no longer accepts events."""


class EventBusOverflow(EventBusError):
    """Bounded event queue is full."""


class UnsupportedPlatform(EventBusError):
    """OS hot-plug facility is not available."""


# Supervisor


class SupervisorError(RapidError):
    """Device lifecycle failure."""


class SpawnFailure(SupervisorError):
    """on_attach command could not be started."""


# Transport


class TransportError(RapidError):
    """Publish-subscribe transport failure."""


class FrameTooLarge(TransportError):
    """Payload exceeds the 16 MiB frame cap."""


class NotBound(TransportError):
    """Publisher is not connected to a broker."""


class ConnectFailure(TransportError):
    """Endpoint could not be reached."""


class BeaconSocketError(TransportError):
    """Beacon UDP socket could not be opened."""


# Synchronizer


class SyncError(RapidError):
    """Synchronizer input failure."""


class ShapeMismatch(SyncError):
    """Arrays of different shapes where equal shapes are required."""


# Recorder


class RecorderError(RapidError):
    """Episode container failure."""


class CorruptContainer(RecorderError):
    """Episode file is damaged at a known byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DiskFull(RecorderError):
    """No space left while appending records."""


class TopicUnavailable(RecorderError):
    """Requested topic is not known to the registry or broker."""


# Scenario and CLI


class HarnessError(RapidError):
    """Scenario harness could not drive the system."""


class PipelineAborted(RapidError):
    """Consumer pipeline stopped on a fatal stream error (the scenario Crash status)."""


class DaemonUnreachable(RapidError):
    """Daemon control socket could not be reached."""

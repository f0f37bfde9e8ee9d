"""
Hot-plug rule generator.

Renders a Registry as a udev rules file (installed as 99-rapid.rules) that
gives every registered module a stable /dev/rapid/<name> symlink.
"""

from typing import List

from src.core.registry import Registry
from src.schemas.device import DeviceDescriptor

RULES_FILE_NAME = "99-rapid.rules"

RULES_HEADER = (
    "# 99-rapid.rules: stable device paths for registered RAPID modules.\n"
    "# Generated by `rapidctl register`; edit the registry file instead.\n"
)


def _quote(value: str) -> str:
    return value.replace("\\", "\\\\").replace('"', '\\"')


def rule_line(descriptor: DeviceDescriptor) -> str:
    """
    Render one rule line.

    Serial-bearing descriptors match on the serial attribute; model
    descriptors match on vendor and product id only.

    Args:
        descriptor: Registered device

    Returns:
        Rule text without trailing newline
    """
    identity = descriptor.identity
    clauses = [
        'SUBSYSTEM=="usb"',
        f'ATTRS{{idVendor}}=="{identity.vid:04x}"',
        f'ATTRS{{idProduct}}=="{identity.pid:04x}"',
    ]
    if identity.serial is not None:
        clauses.append(f'ATTRS{{serial}}=="{_quote(identity.serial)}"')
    clauses.append(f'SYMLINK+="rapid/{descriptor.name}"')
    clauses.append(f'ENV{{RAPID_DEVICE}}="{descriptor.name}"')
    return ", ".join(clauses)


def generate_hotplug_rules(registry: Registry) -> str:
    """
    Generate the hot-plug rules file for a registry.

    Output is byte-identical for identical registries.

    Args:
        registry: Loaded registry

    Returns:
        Rules text: header comment then one line per descriptor in bit order
    """
    lines: List[str] = [rule_line(d) for d in sorted(registry, key=lambda d: d.bit)]
    if not lines:
        return RULES_HEADER
    return RULES_HEADER + "\n".join(lines) + "\n"

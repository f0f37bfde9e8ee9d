"""
Export formatters for registration artifacts and reports.
"""

import json
import shlex
from typing import Any, Dict, List

from src.core.registry import Registry, ValidationReport

DESCRIPTORS_FILE_NAME = "rapid_descriptors.json"
NODES_FILE_NAME = "rapid_nodes.json"


class ExportFormatters:
    """Formatters for registry-derived artifacts."""

    @staticmethod
    def to_descriptor_json(registry: Registry, pretty: bool = True) -> str:
        """
        Export the resolved registry (descriptors with assigned bits).

        Args:
            registry: Loaded registry
            pretty: Pretty print JSON

        Returns:
            JSON string, stable across runs for the same registry
        """
        devices: List[Dict[str, Any]] = []
        for descriptor in registry:
            entry = descriptor.model_dump(mode="json")
            entry["shape"] = list(descriptor.shape)
            devices.append(entry)

        return (
            json.dumps(
                {
                    "format_version": 1,
                    "version_stamp": registry.version_stamp,
                    "total": len(devices),
                    "devices": devices,
                },
                indent=2 if pretty else None,
                sort_keys=True,
            )
            + "\n"
        )

    @staticmethod
    def to_node_entries(registry: Registry, pretty: bool = True) -> str:
        """
        Export node entries: the argv each module is launched with.

        Args:
            registry: Loaded registry
            pretty: Pretty print JSON

        Returns:
            JSON string mapping device name to argv, topic and bit
        """
        nodes = {
            d.name: {
                "argv": shlex.split(d.on_attach),
                "on_detach": shlex.split(d.on_detach) if d.on_detach else None,
                "topic": d.topic,
                "bit": d.bit,
            }
            for d in registry
        }
        return json.dumps({"nodes": nodes}, indent=2 if pretty else None, sort_keys=True) + "\n"

    @staticmethod
    def to_report_text(report: ValidationReport, source: str = "registry") -> str:
        """
        Render a validation report as plain text (one finding per line).

        Args:
            report: Validation report
            source: File name shown in the summary line

        Returns:
            Plain text string
        """
        lines = [f"{source}: {finding}" for finding in report.findings]
        if report.ok:
            lines.append(f"{source}: OK ({report.device_count} devices)")
        else:
            lines.append(f"{source}: {len(report.errors)} error(s)")
        return "\n".join(lines)

    @staticmethod
    def to_report_json(report: ValidationReport, source: str = "registry") -> str:
        """Validation report as JSON."""
        return json.dumps(
            {
                "source": source,
                "ok": report.ok,
                "device_count": report.device_count,
                "findings": [f.model_dump() for f in report.findings],
            },
            indent=2,
        )

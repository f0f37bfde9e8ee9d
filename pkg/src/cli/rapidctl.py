"""
rapidctl: command-line front end of the RAPID middleware.

Exit codes are uniform across subcommands:

    0  success
    1  runtime failure
    2  configuration error (registry, arguments)
    3  environment error (daemon or broker unreachable, unwritable paths)
"""

import argparse
import asyncio
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from src.cli.monitor import monitor
from src.core.config import get_version, settings
from src.core.exceptions import (
    BeaconSocketError,
    ConnectFailure,
    CorruptContainer,
    DaemonUnreachable,
    DiskFull,
    HarnessError,
    MaskIoError,
    RapidError,
    RegistryError,
    TopicUnavailable,
)
from src.core.logging import setup_child_logging, setup_logging
from src.core.registry import Registry, load_descriptor_file, load_registry, validate_registration
from src.events.control import control_request
from src.exporters.formats import DESCRIPTORS_FILE_NAME, NODES_FILE_NAME, ExportFormatters
from src.exporters.udev import RULES_FILE_NAME, generate_hotplug_rules
from src.recorder.audit import audit
from src.recorder.replay import replay
from src.recorder.session import RecordingSession
from src.scenario.bench import bench_mask_path, render_bench_text
from src.scenario.harness import (
    build_spec,
    run_grid,
    run_live_scenario,
    run_scenario,
    scenario_registry,
)
from src.schemas.scenario import Condition, ConsumerMode, ScenarioOutcome
from src.transport.beacon import discover

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ENVIRONMENT = 3


def _error(message: str) -> None:
    print(f"rapidctl: {message}", file=sys.stderr)


def _emit_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def _read_registry(path: str) -> Registry:
    """
    Load a registry from TOML, or from a resolved descriptor file (.json).

    Raises:
        OSError: File unreadable
        RegistryError: Invalid contents
    """
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".json"):
        return load_descriptor_file(text)
    return load_registry(text)


def _print_findings(path: str, as_json: bool) -> None:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError:
        return
    if path.endswith(".json"):
        return
    report = validate_registration(text)
    if as_json:
        print(ExportFormatters.to_report_json(report, path))
    else:
        print(ExportFormatters.to_report_text(report, path), file=sys.stderr)


# run


def cmd_run(args: argparse.Namespace) -> int:
    from src.main import DaemonOptions, run_daemon

    try:
        registry = _read_registry(args.config)
    except OSError as e:
        _error(f"cannot read {args.config}: {e}")
        return EXIT_CONFIG
    except RegistryError as e:
        _error(str(e))
        _print_findings(args.config, args.json)
        return EXIT_CONFIG

    setup_logging(level=args.log_level)
    options = DaemonOptions.from_settings(
        mask_path=args.mask_path,
        control_socket=args.control_socket,
        heartbeat_socket=args.heartbeat_socket,
        bind=args.bind,
        os_events=False if args.no_os_events else None,
        api_enabled=True if args.api else None,
    )

    def on_ready(line: str) -> None:
        if args.json:
            ready = {"ready": True, "devices": registry.names, "mask_path": options.mask_path}
            print(json.dumps(ready), flush=True)
        else:
            print(line, flush=True)

    try:
        asyncio.run(run_daemon(registry, options, on_ready=on_ready))
    except MaskIoError as e:
        _error(f"mask path not writable: {e}")
        return EXIT_ENVIRONMENT
    except (ConnectFailure, OSError) as e:
        _error(f"environment error: {e}")
        return EXIT_ENVIRONMENT
    except RapidError as e:
        _error(str(e))
        return EXIT_FAILURE
    return EXIT_OK


# register


def cmd_register(args: argparse.Namespace) -> int:
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as e:
        _error(f"cannot read {args.config}: {e}")
        return EXIT_CONFIG

    if args.config.endswith(".json"):
        try:
            registry = load_descriptor_file(text)
        except RegistryError as e:
            _error(f"{args.config}: {e}")
            return EXIT_CONFIG
        report_text = f"{args.config}: OK ({len(registry)} devices)"
        report_json = {
            "source": args.config,
            "ok": True,
            "device_count": len(registry),
            "findings": [],
        }
    else:
        report = validate_registration(text)
        if not report.ok:
            if args.json:
                print(ExportFormatters.to_report_json(report, args.config))
            else:
                print(ExportFormatters.to_report_text(report, args.config))
            return EXIT_CONFIG
        registry = load_registry(text)
        report_text = ExportFormatters.to_report_text(report, args.config)
        report_json = json.loads(ExportFormatters.to_report_json(report, args.config))

    out_dir = Path(args.out_dir) if args.out_dir else Path(args.config).resolve().parent
    artifacts = {
        RULES_FILE_NAME: generate_hotplug_rules(registry),
        DESCRIPTORS_FILE_NAME: ExportFormatters.to_descriptor_json(registry),
        NODES_FILE_NAME: ExportFormatters.to_node_entries(registry),
    }
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, content in artifacts.items():
            (out_dir / name).write_text(content, encoding="utf-8")
    except OSError as e:
        _error(f"cannot write artifacts to {out_dir}: {e}")
        return EXIT_ENVIRONMENT

    written = [str(out_dir / name) for name in artifacts]
    if args.json:
        report_json["artifacts"] = written
        _emit_json(report_json)
    else:
        print(report_text)
        for path in written:
            print(f"wrote {path}")
    return EXIT_OK


# inject


def cmd_inject(args: argparse.Namespace) -> int:
    request = {"kind": args.kind, "vid": args.vid, "pid": args.pid}
    if args.serial:
        request["serial"] = args.serial
    if args.device_path:
        request["device_path"] = args.device_path

    try:
        response = asyncio.run(control_request(args.control_socket, request))
    except DaemonUnreachable as e:
        _error(str(e))
        return EXIT_ENVIRONMENT

    if args.json:
        _emit_json(response)
        return EXIT_OK if response.get("ok") else EXIT_CONFIG

    if not response.get("ok"):
        _error(f"{response.get('error')}: {response.get('message')}")
        return EXIT_CONFIG
    outcome = response.get("outcome")
    if outcome is None:
        print(response.get("message", "queued"))
    elif not outcome.get("matched"):
        serial = f" serial {args.serial}" if args.serial else ""
        print(f"{outcome.get('message')}: {args.vid}:{args.pid}{serial}")
    elif outcome.get("message") == "orphan detach":
        print(f"warning: orphan detach for {outcome.get('device')}")
    else:
        print(f"{outcome['device']}: {outcome['state']}")
    return EXIT_OK


# monitor


def cmd_monitor(args: argparse.Namespace) -> int:
    try:
        return asyncio.run(
            monitor(
                args.control_socket,
                mask_path=args.mask_path,
                interval=args.interval,
                once=args.once,
                plain=args.plain,
                as_json=args.json,
            )
        )
    except KeyboardInterrupt:
        return EXIT_OK


# record / replay / audit


def cmd_record(args: argparse.Namespace) -> int:
    try:
        registry = _read_registry(args.registry)
    except (OSError, RegistryError) as e:
        _error(f"{args.registry}: {e}")
        return EXIT_CONFIG

    topics = args.topics.split(",") if args.topics else None
    mask_path = None if args.mask_topic else args.mask_path
    try:
        session = RecordingSession(args.output, registry, args.connect, topics, mask_path)
        counts = asyncio.run(session.run(args.duration))
    except TopicUnavailable as e:
        _error(str(e))
        return EXIT_CONFIG
    except ConnectFailure as e:
        _error(str(e))
        return EXIT_ENVIRONMENT
    except DiskFull as e:
        _error(str(e))
        return EXIT_ENVIRONMENT
    except KeyboardInterrupt:
        return EXIT_OK
    except RapidError as e:
        _error(str(e))
        return EXIT_FAILURE

    if args.json:
        _emit_json({"episode": args.output, "records": counts})
    else:
        print(f"recorded {args.output}")
        for name, count in counts.items():
            print(f"  {name:<20} {count:>8}")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        stats = asyncio.run(replay(args.episode, args.connect, args.speed))
    except CorruptContainer as e:
        _error(str(e))
        return EXIT_FAILURE
    except (ConnectFailure, OSError) as e:
        _error(str(e))
        return EXIT_ENVIRONMENT
    except ValueError as e:
        _error(str(e))
        return EXIT_CONFIG

    if args.json:
        _emit_json({"published": dict(stats.published), "duration_s": stats.duration_s})
    else:
        print(f"replayed {stats.total} records in {stats.duration_s:.3f} s")
        for topic, count in sorted(stats.published.items()):
            print(f"  {topic:<28} {count:>8}")
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    require = [r for r in (args.require or "").split(",") if r]
    try:
        report = audit(args.episode, require, strict=not args.tolerant)
    except CorruptContainer as e:
        _error(str(e))
        return EXIT_FAILURE
    except OSError as e:
        _error(str(e))
        return EXIT_ENVIRONMENT
    except ValueError as e:
        _error(str(e))
        return EXIT_CONFIG

    if args.json:
        print(report.model_dump_json(indent=2))
        return EXIT_OK

    print(
        f"episode {report.episode}: {report.duration_s:.3f} s, {report.mask_records} mask records"
    )
    if report.damage_offset is not None:
        print(f"  trailing damage at byte {report.damage_offset}")
    for modality in report.modalities:
        print(
            f"  {modality.name:<20} bit {modality.bit:>2}  {modality.data_records:>7} records  "
            f"dropout {modality.dropout_s:.3f} s in {len(modality.intervals)} interval(s)"
        )
        for interval in modality.intervals:
            print(f"      {interval.start_ns} .. {interval.end_ns} ({interval.duration_s:.3f} s)")
    if report.required:
        print(
            f"  usable with {','.join(report.required)}: {report.usable_s:.3f} s "
            f"in {len(report.usable_segments)} segment(s)"
        )
    return EXIT_OK


# scenario / bench / discover


def _print_outcome(outcome: ScenarioOutcome) -> None:
    crash = ""
    if outcome.crashed_at_s is not None:
        crash = f" at {outcome.crashed_at_s:.3f} s ({outcome.crash_reason})"
    print(f"{outcome.condition.value:<10} {outcome.mode.value:<13} {outcome.status.value}{crash}")
    fractions = ", ".join(f"{k} {v:.2f}" for k, v in sorted(outcome.zero_filled_fraction.items()))
    print(f"    observations {outcome.observations_emitted}, zero-filled: {fractions}")


def cmd_scenario(args: argparse.Namespace) -> int:
    window_ns = None
    if args.sync_window_ms is not None:
        window_ns = int(args.sync_window_ms * 1_000_000)
    try:
        if args.all:
            outcomes = asyncio.run(run_grid(args.duration, window_ns))
        elif args.live:
            registry = _read_registry(args.registry) if args.registry else scenario_registry()
            spec = build_spec(args.condition, args.mode, args.duration, registry=registry)
            live = run_live_scenario(spec, registry, args.control_socket, args.connect, window_ns)
            outcomes = [asyncio.run(live)]
        else:
            spec = build_spec(args.condition, args.mode, args.duration)
            outcomes = [asyncio.run(run_scenario(spec, window_ns=window_ns))]
    except (OSError, RegistryError, ValueError) as e:
        _error(str(e))
        return EXIT_CONFIG
    except HarnessError as e:
        _error(str(e))
        return EXIT_ENVIRONMENT

    payload = [o.model_dump(mode="json") for o in outcomes]
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    if args.json:
        _emit_json(payload if len(payload) > 1 else payload[0])
    else:
        for outcome in outcomes:
            _print_outcome(outcome)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        report = asyncio.run(
            bench_mask_path(
                transitions=args.transitions,
                publish_window_s=args.window,
                with_sensors=args.with_sensors,
            )
        )
    except MaskIoError as e:
        _error(str(e))
        return EXIT_ENVIRONMENT

    if args.report:
        Path(args.report).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    if args.json:
        print(report.model_dump_json(indent=2))
    else:
        sys.stdout.write(render_bench_text(report))
    return EXIT_OK


def cmd_discover(args: argparse.Namespace) -> int:
    try:
        result = asyncio.run(discover(args.host, args.port, args.listen))
    except BeaconSocketError as e:
        _error(str(e))
        return EXIT_ENVIRONMENT

    if args.json:
        _emit_json(
            {
                "nodes": {
                    name: {"endpoint": b.endpoint, "topics": list(b.topics)}
                    for name, b in sorted(result.nodes.items())
                },
                "warnings": result.warnings,
            }
        )
    else:
        for name, beacon in sorted(result.nodes.items()):
            print(f"{name:<24} {beacon.endpoint:<22} {','.join(beacon.topics)}")
        for warning in result.warnings:
            print(f"warning: {warning}")
    return EXIT_OK


# Parser


def build_parser() -> argparse.ArgumentParser:
    output = argparse.ArgumentParser(add_help=False)
    output.add_argument("--json", action="store_true", help="Machine-readable JSON output")

    parser = argparse.ArgumentParser(
        prog="rapidctl",
        description="Hot-plug multimodal device middleware",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Validate a registry and write hot-plug rules and descriptor files
  %(prog)s register rapid.toml

  # Run the daemon
  %(prog)s run rapid.toml

  # Simulate plugging in the left tactile sensor
  %(prog)s inject attach --vid 0x1234 --pid 0x5678 --serial TACL001

  # One plain-text status snapshot
  %(prog)s monitor --once --plain
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {get_version()}")
    parser.add_argument("--log-level", default=None, help="Log level (default: settings)")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", parents=[output], help="Run the daemon")
    run.add_argument(
        "config", nargs="?", default=settings.RAPID_REGISTRY_PATH, help="Registry file"
    )
    run.add_argument("--mask-path", help="Shared mask file")
    run.add_argument("--control-socket", help="Control socket path")
    run.add_argument("--heartbeat-socket", help="Heartbeat socket path")
    run.add_argument("--bind", help="Broker host:port")
    run.add_argument("--no-os-events", action="store_true", help="Serve injected events only")
    run.add_argument("--api", action="store_true", help="Serve the read-only HTTP status API")
    run.set_defaults(func=cmd_run)

    register = subparsers.add_parser(
        "register", parents=[output], help="Validate and generate artifacts"
    )
    register.add_argument("config", help="Registry TOML (or resolved descriptor JSON)")
    register.add_argument("--out-dir", help="Artifact directory (default: next to the config)")
    register.set_defaults(func=cmd_register)

    inject = subparsers.add_parser("inject", parents=[output], help="Inject a hot-plug event")
    inject.add_argument("kind", choices=["attach", "detach"])
    inject.add_argument("--vid", required=True, help="Vendor id, e.g. 0x1234")
    inject.add_argument("--pid", required=True, help="Product id, e.g. 0x5678")
    inject.add_argument("--serial", help="Serial number")
    inject.add_argument("--device-path", help="Device node path")
    inject.add_argument("--control-socket", default=settings.RAPID_CONTROL_SOCKET)
    inject.set_defaults(func=cmd_inject)

    mon = subparsers.add_parser("monitor", parents=[output], help="Read-only status view")
    mon.add_argument(
        "--interval", type=float, default=0.5, help="Refresh interval in seconds (default: 0.5)"
    )
    mon.add_argument("--once", action="store_true", help="Print one snapshot and exit")
    mon.add_argument("--plain", action="store_true", help="No colors or screen control")
    mon.add_argument("--control-socket", default=settings.RAPID_CONTROL_SOCKET)
    mon.add_argument("--mask-path", default=settings.RAPID_MASK_PATH)
    mon.set_defaults(func=cmd_monitor)

    record = subparsers.add_parser("record", parents=[output], help="Record an episode")
    record.add_argument("output", help="Episode file to create")
    record.add_argument("--registry", default=settings.RAPID_REGISTRY_PATH, help="Registry file")
    record.add_argument("--topics", help="Comma-separated topics (default: all registered)")
    record.add_argument(
        "--duration", type=float, help="Seconds to record (default: until interrupted)"
    )
    record.add_argument("--connect", default=settings.RAPID_BIND, help="Broker host:port")
    record.add_argument("--mask-path", default=settings.RAPID_MASK_PATH, help="Shared mask file")
    record.add_argument(
        "--mask-topic", action="store_true", help="Take masks from the broker's mask topic"
    )
    record.set_defaults(func=cmd_record)

    rep = subparsers.add_parser("replay", parents=[output], help="Re-publish an episode")
    rep.add_argument("episode", help="Episode file")
    rep.add_argument("--speed", type=float, default=1.0, help="Time scale, 0 = as fast as possible")
    rep.add_argument("--connect", default=settings.RAPID_BIND, help="Broker host:port")
    rep.set_defaults(func=cmd_replay)

    aud = subparsers.add_parser("audit", parents=[output], help="Dropout report of an episode")
    aud.add_argument("episode", help="Episode file")
    aud.add_argument("--require", help="Comma-separated modalities for usable-segment analysis")
    aud.add_argument(
        "--tolerant", action="store_true", help="Audit the intact prefix of a damaged file"
    )
    aud.set_defaults(func=cmd_audit)

    scen = subparsers.add_parser(
        "scenario", parents=[output], help="Runtime modality-change scenario"
    )
    scen.add_argument(
        "--condition", choices=[c.value for c in Condition], default=Condition.FULL.value
    )
    scen.add_argument(
        "--mode", choices=[m.value for m in ConsumerMode], default=ConsumerMode.MASK_AWARE.value
    )
    scen.add_argument("--duration", type=float, default=10.0, help="Scenario length in seconds")
    scen.add_argument("--all", action="store_true", help="Run the whole condition/mode grid")
    scen.add_argument(
        "--live", action="store_true", help="Drive a running daemon instead of simulating"
    )
    scen.add_argument("--registry", help="Registry of the live daemon (default: built-in trio)")
    scen.add_argument("--control-socket", default=settings.RAPID_CONTROL_SOCKET)
    scen.add_argument("--connect", default=settings.RAPID_BIND, help="Broker host:port")
    scen.add_argument(
        "--sync-window-ms",
        type=float,
        help=f"Alignment window in ms (default: {settings.SYNC_WINDOW_MS})",
    )
    scen.add_argument("--report", help="Write outcomes as JSON to this file")
    scen.set_defaults(func=cmd_scenario)

    bench = subparsers.add_parser("bench", parents=[output], help="Mask-path latency benchmark")
    bench.add_argument(
        "--transitions", type=int, default=1000, help="Injected transitions (default: 1000)"
    )
    bench.add_argument("--window", type=float, default=10.0, help="Publish-rate window in seconds")
    bench.add_argument("--with-sensors", action="store_true", help="Also time attach to first data")
    bench.add_argument("--report", help="Write the report as JSON to this file")
    bench.set_defaults(func=cmd_bench)

    disc = subparsers.add_parser("discover", parents=[output], help="Listen for node beacons")
    disc.add_argument("--host", default=settings.RAPID_BEACON_HOST, help="Address to bind")
    disc.add_argument(
        "--port", type=int, default=settings.RAPID_BEACON_PORT, help="Beacon UDP port"
    )
    disc.add_argument("--listen", type=float, default=3.0, help="Listen window in seconds")
    disc.set_defaults(func=cmd_discover)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG

    if args.command != "run":
        setup_child_logging("rapidctl", args.log_level or os.environ.get("LOG_LEVEL", "WARNING"))
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

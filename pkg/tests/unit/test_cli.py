"""
Unit tests for rapidctl subcommands and the monitor rendering.
"""

import json

import pytest

from src.cli.monitor import GREEN, RED, render_snapshot, render_unreachable
from src.cli.rapidctl import EXIT_CONFIG, EXIT_ENVIRONMENT, EXIT_OK, main
from src.core.mask import PhysicalMask, encode_mask
from src.core.registry import load_registry
from src.exporters.formats import DESCRIPTORS_FILE_NAME, NODES_FILE_NAME
from src.exporters.udev import RULES_FILE_NAME
from src.recorder.container import EpisodeWriter, build_manifest
from src.schemas.episode import MASK_CHANNEL_ID
from src.schemas.status import DeviceState, DeviceStatus, StatusSnapshot
from tests.conftest import EXAMPLE_REGISTRY, GOLDEN_DIR


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "rapid.toml"
    path.write_text(EXAMPLE_REGISTRY)
    return path


class TestRegisterCommand:
    """Test rapidctl register."""

    def test_writes_artifacts(self, config_path, tmp_path, capsys):
        """A valid registry writes rules, descriptors and node entries."""
        out = tmp_path / "out"
        assert main(["register", str(config_path), "--out-dir", str(out)]) == EXIT_OK

        rules = (out / RULES_FILE_NAME).read_text()
        assert rules == (GOLDEN_DIR / "99-rapid.rules").read_text()
        assert json.loads((out / DESCRIPTORS_FILE_NAME).read_text())["total"] == 3
        assert "tac_left" in json.loads((out / NODES_FILE_NAME).read_text())["nodes"]
        assert "OK (3 devices)" in capsys.readouterr().out

    def test_default_out_dir(self, config_path):
        """Artifacts land next to the config by default."""
        assert main(["register", str(config_path)]) == EXIT_OK
        assert (config_path.parent / RULES_FILE_NAME).exists()

    def test_invalid_registry(self, tmp_path, capsys):
        """Findings are printed and nothing is written."""
        path = tmp_path / "bad.toml"
        path.write_text(EXAMPLE_REGISTRY.replace('vid = "0x1234"', 'vid = "0xZZZZ"'))
        assert main(["register", str(path), "--json"]) == EXIT_CONFIG

        report = json.loads(capsys.readouterr().out)
        assert report["ok"] is False
        assert report["findings"][0]["code"] == "BadIdentity"
        assert not (tmp_path / RULES_FILE_NAME).exists()

    def test_missing_file(self, tmp_path):
        """An unreadable config is a configuration error."""
        assert main(["register", str(tmp_path / "absent.toml")]) == EXIT_CONFIG

    def test_resolved_descriptor_file(self, config_path, tmp_path):
        """A descriptor JSON produced by register is accepted as input."""
        out = tmp_path / "out"
        main(["register", str(config_path), "--out-dir", str(out)])
        again = tmp_path / "again"
        path = str(out / DESCRIPTORS_FILE_NAME)
        assert main(["register", path, "--out-dir", str(again)]) == EXIT_OK
        assert (again / RULES_FILE_NAME).read_text() == (out / RULES_FILE_NAME).read_text()


class TestCommandErrors:
    """Test uniform exit codes."""

    def test_usage_error(self):
        """Unknown subcommands are configuration errors."""
        assert main(["frobnicate"]) == EXIT_CONFIG

    def test_version(self, capsys):
        """--version exits cleanly."""
        assert main(["--version"]) == EXIT_OK
        assert capsys.readouterr().out.startswith("rapidctl ")

    def test_inject_without_daemon(self, sock_dir):
        """Injecting with no daemon is an environment error."""
        code = main(
            [
                "inject",
                "attach",
                "--vid",
                "0x1234",
                "--pid",
                "0x5678",
                "--control-socket",
                str(sock_dir / "absent.sock"),
            ]
        )
        assert code == EXIT_ENVIRONMENT

    def test_monitor_once_without_daemon(self, sock_dir, capsys):
        """A one-shot monitor reports the unreachable daemon."""
        code = main(["monitor", "--once", "--control-socket", str(sock_dir / "absent.sock")])
        assert code == EXIT_ENVIRONMENT
        assert "DAEMON UNREACHABLE" in capsys.readouterr().err


class TestAuditCommand:
    """Test rapidctl audit on a small episode."""

    @pytest.fixture
    def episode_path(self, tmp_path):
        registry = load_registry(EXAMPLE_REGISTRY)
        path = tmp_path / "ep.rapid"
        masks = [(0, 0b111), (1_000_000_000, 0b101), (3_000_000_000, 0b111)]
        with EpisodeWriter(str(path), build_manifest(registry)) as writer:
            for ts, word in masks:
                record = PhysicalMask(device_count=3, mask=word, timestamp_ns=ts)
                writer.write(MASK_CHANNEL_ID, ts, encode_mask(record))
        return str(path)

    def test_audit_json(self, episode_path, capsys):
        """The JSON report lists the tac_left dropout."""
        assert main(["audit", episode_path, "--json", "--require", "tac_left"]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        tac = next(m for m in report["modalities"] if m["name"] == "tac_left")
        assert tac["intervals"] == [{"start_ns": 1_000_000_000, "end_ns": 3_000_000_000}]
        assert len(report["usable_segments"]) == 2

    def test_audit_text(self, episode_path, capsys):
        """The text report has one row per modality."""
        assert main(["audit", episode_path]) == EXIT_OK
        out = capsys.readouterr().out
        assert "3.000 s, 3 mask records" in out
        assert "dropout 2.000 s in 1 interval(s)" in out

    def test_unknown_modality(self, episode_path):
        """Requiring an unknown modality is a configuration error."""
        assert main(["audit", episode_path, "--require", "lidar"]) == EXIT_CONFIG

    def test_corrupt_episode(self, tmp_path):
        """A foreign file fails the audit."""
        path = tmp_path / "junk.rapid"
        path.write_bytes(b"not an episode at all")
        assert main(["audit", str(path)]) == 1


class TestMonitorRendering:
    """Test the status view text."""

    @pytest.fixture
    def snapshot(self):
        return StatusSnapshot(
            devices=[
                DeviceStatus(name="cam_wrist", bit=0, state=DeviceState.ONLINE, attached=True),
                DeviceStatus(
                    name="tac_left",
                    bit=1,
                    state=DeviceState.BACKOFF,
                    attached=True,
                    restart_count=5,
                    failed=True,
                ),
            ],
            mask=0b01,
            device_count=2,
            sequence=42,
            recent_log=["1.000 cam_wrist: Offline -> AttachedStarting (attach)"],
        )

    def test_plain_snapshot(self, snapshot):
        """Plain output has the mask line, one row per device and the log."""
        text = render_snapshot(snapshot)
        lines = text.splitlines()
        assert lines[0] == "mask 0x01 00000001 seq 42 online 1/2"
        assert lines[1] == "file unavailable"
        assert any(line.startswith("tac_left") and line.endswith("failed") for line in lines)
        assert "\033[" not in text
        assert text.endswith("(attach)\n")

    def test_file_mask_line(self, snapshot):
        """The shared-file record is shown next to the daemon word."""
        record = PhysicalMask(device_count=2, mask=0b01, sequence=43)
        assert render_snapshot(snapshot, record).splitlines()[1] == "file 0x01 00000001 seq 43"

    def test_colors(self, snapshot):
        """Online is green and backoff is red."""
        text = render_snapshot(snapshot, color=True)
        assert GREEN + "Online" in text
        assert RED + "Backoff" in text

    def test_identical_input_identical_text(self, snapshot):
        """Rendering is deterministic."""
        assert render_snapshot(snapshot) == render_snapshot(snapshot.model_copy())

    def test_unreachable(self):
        """The unreachable banner names the error."""
        assert render_unreachable(OSError("gone")) == "DAEMON UNREACHABLE: gone\n"


class TestScenarioCommand:
    """Test rapidctl scenario in simulation."""

    def test_single_cell_json(self, capsys):
        """One cell prints one outcome object."""
        args = ["scenario", "--condition", "HotUnplug", "--json"]
        assert main(args) == EXIT_OK
        outcome = json.loads(capsys.readouterr().out)
        assert outcome["status"] == "Degraded"

    def test_sync_window_flag(self, capsys):
        """A custom alignment window is accepted."""
        args = ["scenario", "--duration", "4", "--sync-window-ms", "10", "--json"]
        assert main(args) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["status"] == "Normal"

    def test_non_positive_window(self):
        """A zero window is a configuration error."""
        assert main(["scenario", "--duration", "1", "--sync-window-ms", "0"]) == EXIT_CONFIG

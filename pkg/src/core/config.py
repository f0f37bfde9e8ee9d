"""
Configuration module for the RAPID device middleware.

This module handles all configuration settings using pydantic-settings
for environment variable management and validation.
"""

import os
import tempfile
import tomllib
from pathlib import Path
from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict


def get_version() -> str:
    """Read version from pyproject.toml dynamically."""
    try:
        # Get the project root directory
        project_root = Path(__file__).parent.parent.parent
        pyproject_path = project_root / "pyproject.toml"

        if pyproject_path.exists():
            with open(pyproject_path, "rb") as f:
                data = tomllib.load(f)
                return data.get("tool", {}).get("poetry", {}).get("version", "1.0.0")
        return "1.0.0"
    except Exception:
        return "1.0.0"


def default_mask_path() -> str:
    """Shared-memory directory when the platform has one, temp directory otherwise."""
    shm = Path("/dev/shm")
    base = shm if shm.is_dir() else Path(tempfile.gettempdir())
    return str(base / "rapid_hardware_mask")


def default_socket_path(name: str) -> str:
    """Unix socket path under the temp directory."""
    return os.path.join(tempfile.gettempdir(), name)


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env", env_file_encoding="utf-8", case_sensitive=True, extra="ignore"
    )

    # Registry
    RAPID_REGISTRY_PATH: str = "rapid.toml"

    # Physical Mask channel
    RAPID_MASK_PATH: str = default_mask_path()
    RAPID_MASK_DEBUG_PATH: Optional[str] = None  # Defaults to RAPID_MASK_PATH + ".json"
    MASK_PUBLISH_INTERVAL_MS: float = 2.0  # 500 Hz
    MASK_DEBUG_INTERVAL_S: float = 1.0
    MASK_TOPIC_RATE_HZ: float = 100.0

    # Local sockets
    RAPID_CONTROL_SOCKET: str = default_socket_path("rapid_control.sock")
    RAPID_HEARTBEAT_SOCKET: str = default_socket_path("rapid_heartbeat.sock")

    # Transport
    RAPID_BIND: str = "127.0.0.1:7450"
    RAPID_BEACON_HOST: str = "127.0.0.1"
    RAPID_BEACON_PORT: int = 7451
    RAPID_BEACON_PERIOD_S: float = 1.0

    # Supervisor lifecycle
    SUPERVISOR_COOLDOWN_S: float = 2.0
    SUPERVISOR_GRACE_S: float = 5.0
    SUPERVISOR_BACKOFF_BASE_S: float = 1.0
    SUPERVISOR_BACKOFF_MAX_ATTEMPTS: int = 5
    SUPERVISOR_BACKOFF_WINDOW_S: float = 60.0
    SUPERVISOR_TICK_MS: float = 2.0
    HEARTBEAT_INTERVAL_S: float = 1.0
    HEARTBEAT_MISSES_FATAL: int = 3

    # Synchronizer
    SYNC_WINDOW_MS: float = 25.0

    # Event sources
    ENABLE_OS_EVENTS: bool = True

    # HTTP status API (read-only)
    API_ENABLED: bool = False
    API_HOST: str = "127.0.0.1"
    API_PORT: int = 8450

    # Logging Configuration
    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = "logs/rapid.log"

    @property
    def mask_debug_path(self) -> str:
        """Path of the 1 Hz JSON debug view."""
        return self.RAPID_MASK_DEBUG_PATH or f"{self.RAPID_MASK_PATH}.json"

    @property
    def sync_window_ns(self) -> int:
        """Synchronizer alignment window in nanoseconds."""
        return int(self.SYNC_WINDOW_MS * 1_000_000)


settings = Settings()

"""
Logging configuration for the application.

Sets up file-based logging with proper formatting and rotation.
"""

import logging
import logging.handlers
import sys
from pathlib import Path
from typing import Optional
from src.core.config import settings

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def setup_logging(log_file: Optional[str] = None, level: Optional[str] = None) -> None:
    """
    Configure application-wide logging.

    Creates log directory if needed and sets up file handler
    with rotation and appropriate formatting.

    Args:
        log_file: Override for settings.LOG_FILE
        level: Override for settings.LOG_LEVEL
    """
    log_file = log_file or settings.LOG_FILE
    level = (level or settings.LOG_LEVEL).upper()

    # Create logs directory if it doesn't exist
    log_dir = Path(log_file).parent
    log_dir.mkdir(parents=True, exist_ok=True)

    # Create root logger
    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level))

    # Remove existing handlers
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    # File handler with rotation
    file_handler = logging.handlers.RotatingFileHandler(
        filename=log_file,
        maxBytes=10 * 1024 * 1024,  # 10MB
        backupCount=5,
        encoding="utf-8",
    )

    # Console handler on stderr
    console_handler = logging.StreamHandler(sys.stderr)

    formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)

    file_handler.setFormatter(formatter)
    console_handler.setFormatter(formatter)

    root_logger.addHandler(file_handler)
    root_logger.addHandler(console_handler)

    # Set specific loggers
    logging.getLogger("uvicorn.access").setLevel(logging.WARNING)
    logging.getLogger("asyncio").setLevel(logging.WARNING)

    # Log startup
    root_logger.info("RAPID device middleware starting up")
    root_logger.info(f"Log level: {level}")
    root_logger.info(f"Log file: {log_file}")


def setup_child_logging(name: str, level: Optional[str] = None) -> None:
    """
    Configure stderr-only logging for supervised child processes.

    Args:
        name: Child name prefixed to every line
        level: Override for settings.LOG_LEVEL
    """
    level = (level or settings.LOG_LEVEL).upper()
    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level))
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(f"%(asctime)s - {name} - %(levelname)s - %(message)s"))
    root_logger.addHandler(handler)

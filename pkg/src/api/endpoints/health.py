"""
Health check endpoints.
"""

import logging

from fastapi import APIRouter, Depends

from src.api.dependencies import get_daemon
from src.core.config import get_version
from src.schemas.status import DaemonHealth
from src.utils.clock import monotonic_clock
from src.utils.helpers import popcount, utc_now

logger = logging.getLogger(__name__)
router = APIRouter(prefix="/api/v1", tags=["Health"])

STALE_MASK_MS = 100.0


@router.get("/health", response_model=DaemonHealth)
async def health_check(daemon=Depends(get_daemon)) -> DaemonHealth:
    """
    Check daemon health.

    Returns:
        Health status including mask writer liveness and device counts
    """
    word, device_count = daemon.supervisor.presence_word()
    health_status = {
        "status": "healthy",
        "version": get_version(),
        "timestamp": utc_now(),
        "device_count": device_count,
        "online_count": popcount(word),
        "mask_sequence": 0,
        "mask_age_ms": None,
        "mask_writer": False,
    }

    publisher = daemon.publisher
    if publisher is not None and publisher.latest is not None:
        health_status["mask_writer"] = publisher.running
        health_status["mask_sequence"] = publisher.latest.sequence
        age_ms = (monotonic_clock.now_ns() - publisher.latest.timestamp_ns) / 1e6
        health_status["mask_age_ms"] = round(age_ms, 3)
        if age_ms > STALE_MASK_MS:
            logger.warning(f"Mask record is {age_ms:.1f} ms old")
            health_status["status"] = "degraded"

    if not health_status["mask_writer"]:
        health_status["status"] = "unhealthy"

    return DaemonHealth(**health_status)

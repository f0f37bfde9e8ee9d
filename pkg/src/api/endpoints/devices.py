"""
Device status and mask endpoints.

Read-only: the API mirrors what `rapidctl monitor` shows and never
changes supervisor state.
"""

import logging

from fastapi import APIRouter, Depends, HTTPException

from src.api.dependencies import get_daemon
from src.core.exceptions import MaskError
from src.core.mask import build_debug_view
from src.schemas.mask import MaskDebugView
from src.schemas.status import DeviceStatus, StatusSnapshot

logger = logging.getLogger(__name__)
router = APIRouter(prefix="/api/v1", tags=["Devices"])


@router.get("/devices", response_model=StatusSnapshot)
async def get_devices(daemon=Depends(get_daemon)) -> StatusSnapshot:
    """Every registered device with its lifecycle state."""
    return daemon.status()


@router.get("/devices/{name}", response_model=DeviceStatus)
async def get_device(name: str, daemon=Depends(get_daemon)) -> DeviceStatus:
    """
    One device by name.

    Raises:
        HTTPException: 404 for unregistered names
    """
    row = daemon.status().device(name)
    if row is None:
        raise HTTPException(status_code=404, detail=f"Device {name} is not registered")
    return row


@router.get("/mask", response_model=MaskDebugView)
async def get_mask(daemon=Depends(get_daemon)) -> MaskDebugView:
    """The latest published mask record, rendered like the debug file."""
    publisher = daemon.publisher
    if publisher is None or publisher.latest is None:
        raise HTTPException(status_code=503, detail="No mask published yet")
    try:
        return build_debug_view(publisher.latest, daemon.registry)
    except MaskError as e:
        logger.error(f"Error rendering mask: {e}")
        raise HTTPException(status_code=500, detail="Internal server error")

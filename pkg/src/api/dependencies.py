"""
Shared FastAPI dependencies.
"""

from fastapi import HTTPException, Request


def get_daemon(request: Request):
    """
    The daemon the app was created for.

    Raises:
        HTTPException: 503 when the app is not attached to a running daemon
    """
    daemon = getattr(request.app.state, "daemon", None)
    if daemon is None or daemon.supervisor is None:
        raise HTTPException(status_code=503, detail="Daemon not running")
    return daemon

"""
Event bus between hot-plug sources and the supervisor.

Any number of sources (control socket, OS monitor, scenario timelines)
inject events; exactly one consumer (the supervisor loop) drains them in
arrival order. The queue is bounded; a full queue is reported to the
injector instead of blocking it.
"""

import asyncio
import logging
from dataclasses import dataclass
from typing import Optional

from src.core.exceptions import ChannelClosed, EventBusOverflow
from src.schemas.events import EventOutcome, HotplugEvent

logger = logging.getLogger(__name__)

EVENT_QUEUE_CAPACITY = 1024


@dataclass
class PendingEvent:
    """Queued event plus the future its outcome is delivered on."""

    event: HotplugEvent
    ack: "asyncio.Future[EventOutcome]"

    def resolve(self, outcome: EventOutcome) -> None:
        if not self.ack.done():
            self.ack.set_result(outcome)


class EventBus:
    """Bounded multi-producer, single-consumer event queue."""

    def __init__(self, capacity: int = EVENT_QUEUE_CAPACITY):
        self.capacity = capacity
        self._queue: "asyncio.Queue[Optional[PendingEvent]]" = asyncio.Queue(maxsize=capacity)
        self._closed = False
        self.injected = 0
        self.delivered = 0
        self.overflows = 0

    @property
    def closed(self) -> bool:
        return self._closed

    def qsize(self) -> int:
        return self._queue.qsize()

    def inject(self, event: HotplugEvent) -> "asyncio.Future[EventOutcome]":
        """
        Enqueue an event.

        Must be called from the bus's event loop; OS threads use
        inject_threadsafe.

        Args:
            event: Hot-plug event

        Returns:
            Future resolved with the supervisor's outcome once handled

        Raises:
            ChannelClosed: Bus has been closed
            EventBusOverflow: Queue is at capacity
        """
        if self._closed:
            raise ChannelClosed("event bus is closed")

        pending = PendingEvent(event=event, ack=asyncio.get_running_loop().create_future())
        try:
            self._queue.put_nowait(pending)
        except asyncio.QueueFull:
            self.overflows += 1
            raise EventBusOverflow(f"event queue full ({self.capacity} pending)")

        self.injected += 1
        logger.debug(f"Queued {event.kind.value} {event.identity} from {event.source}")
        return pending.ack

    def inject_threadsafe(self, loop: asyncio.AbstractEventLoop, event: HotplugEvent) -> None:
        """Inject from a foreign thread; overflow and closure are logged."""

        def _put() -> None:
            try:
                self.inject(event)
            except (ChannelClosed, EventBusOverflow) as e:
                logger.warning(f"Dropped OS event {event.kind.value} {event.identity}: {e}")

        loop.call_soon_threadsafe(_put)

    async def get(self) -> Optional[PendingEvent]:
        """
        Next event in arrival order.

        Returns:
            PendingEvent, or None once the bus is closed and drained
        """
        if self._closed and self._queue.empty():
            return None
        pending = await self._queue.get()
        if pending is None:
            return None
        self.delivered += 1
        return pending

    def get_nowait(self) -> Optional[PendingEvent]:
        """Next queued event, or None if the queue is empty."""
        try:
            pending = self._queue.get_nowait()
        except asyncio.QueueEmpty:
            return None
        if pending is not None:
            self.delivered += 1
        return pending

    def close(self) -> None:
        """Stop accepting events and wake the consumer."""
        if self._closed:
            return
        self._closed = True
        try:
            self._queue.put_nowait(None)
        except asyncio.QueueFull:
            pass
        logger.info(f"Event bus closed ({self.injected} injected, {self.delivered} delivered)")

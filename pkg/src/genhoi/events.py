"""Pipeline events.

The trainer and the dataset generator publish progress here; the CLI progress
bar and the NDJSON metrics writer subscribe. Payloads are plain dicts so a
subscriber can serialize them as-is.
"""

from __future__ import annotations

import contextlib
from collections import defaultdict
from collections.abc import Callable, Iterator
from enum import StrEnum
from typing import Any

from genhoi.utils.logging import get_logger

logger = get_logger(__name__)

Payload = dict[str, Any]
Callback = Callable[[Payload], Any]


class Event(StrEnum):
    TRAIN_STEP = "train_step"
    EPOCH_END = "epoch_end"
    CHECKPOINT_SAVED = "checkpoint_saved"
    TRAIN_DIVERGED = "train_diverged"
    GENERATION_PROGRESS = "generation_progress"


TRAIN_STEP = Event.TRAIN_STEP
EPOCH_END = Event.EPOCH_END
CHECKPOINT_SAVED = Event.CHECKPOINT_SAVED
TRAIN_DIVERGED = Event.TRAIN_DIVERGED
GENERATION_PROGRESS = Event.GENERATION_PROGRESS


class EventBus:
    """Synchronous pub-sub bus keyed by ``Event``.

    Callbacks run in subscription order on the emitting thread. A failing
    callback is logged and skipped unless it was subscribed as critical, in
    which case its exception propagates to the emitter.
    """

    def __init__(self) -> None:
        self._subscribers: dict[str, list[Callback]] = defaultdict(list)
        self._critical: dict[str, list[Callback]] = defaultdict(list)

    def subscribe(self, event: str, callback: Callback, *, critical: bool = False) -> None:
        """Subscribe ``callback`` to ``event``; subscribing twice is a no-op.

        Args:
            event: Event name (e.g., TRAIN_STEP)
            callback: Callable that receives the event payload
            critical: Re-raise the callback's exceptions from ``emit``
        """
        if callback not in self._subscribers[event]:
            self._subscribers[event].append(callback)
        if critical and callback not in self._critical[event]:
            self._critical[event].append(callback)

    def unsubscribe(self, event: str, callback: Callback) -> None:
        if event in self._subscribers:
            with contextlib.suppress(ValueError):
                self._subscribers[event].remove(callback)
        if event in self._critical:
            with contextlib.suppress(ValueError):
                self._critical[event].remove(callback)

    @contextlib.contextmanager
    def subscribed(
        self, event: str, callback: Callback, *, critical: bool = False
    ) -> Iterator[EventBus]:
        """Subscribe for the duration of a ``with`` block."""
        self.subscribe(event, callback, critical=critical)
        try:
            yield self
        finally:
            self.unsubscribe(event, callback)

    def emit(self, event: str, data: Payload | None = None) -> None:
        payload = data if data is not None else {}
        for callback in list(self._subscribers.get(event, [])):
            try:
                callback(payload)
            except Exception:
                if callback in self._critical.get(event, ()):
                    raise
                logger.exception(
                    "Subscriber failed on %s",
                    event,
                    extra={"event": str(event)},
                )

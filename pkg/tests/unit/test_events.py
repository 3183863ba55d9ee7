"""Unit tests for EventBus module."""

from __future__ import annotations

from unittest.mock import Mock

import pytest

from genhoi.events import EPOCH_END, GENERATION_PROGRESS, TRAIN_STEP, Event, EventBus


class TestEventBusSubscribe:
    """Tests for EventBus.subscribe()."""

    def test_subscribe_callback(self) -> None:
        """Should allow subscribing a callback to an event."""
        bus = EventBus()
        callback = Mock()
        bus.subscribe(TRAIN_STEP, callback)
        assert bus._subscribers[TRAIN_STEP] == [callback]

    def test_subscribe_is_idempotent(self) -> None:
        """Should not add the same callback twice."""
        bus = EventBus()
        callback = Mock()
        bus.subscribe(TRAIN_STEP, callback)
        bus.subscribe(TRAIN_STEP, callback)
        assert len(bus._subscribers[TRAIN_STEP]) == 1

    def test_subscribe_different_events(self) -> None:
        """Should maintain separate subscriber lists for different events."""
        bus = EventBus()
        bus.subscribe(TRAIN_STEP, Mock())
        bus.subscribe(EPOCH_END, Mock())
        assert len(bus._subscribers[TRAIN_STEP]) == 1
        assert len(bus._subscribers[EPOCH_END]) == 1


class TestEventBusUnsubscribe:
    """Tests for EventBus.unsubscribe()."""

    def test_unsubscribe_callback(self) -> None:
        """Should remove a callback from an event."""
        bus = EventBus()
        callback = Mock()
        bus.subscribe(TRAIN_STEP, callback)
        bus.unsubscribe(TRAIN_STEP, callback)
        assert bus._subscribers[TRAIN_STEP] == []

    def test_unsubscribe_unknown_is_noop(self) -> None:
        """Should ignore callbacks that were never subscribed."""
        bus = EventBus()
        bus.unsubscribe(GENERATION_PROGRESS, Mock())


class TestEventBusEmit:
    """Tests for EventBus.emit()."""

    def test_emit_passes_data(self) -> None:
        """Should call every subscriber with the event data."""
        bus = EventBus()
        first, second = Mock(), Mock()
        bus.subscribe(TRAIN_STEP, first)
        bus.subscribe(TRAIN_STEP, second)
        bus.emit(TRAIN_STEP, {"step": 1})
        first.assert_called_once_with({"step": 1})
        second.assert_called_once_with({"step": 1})

    def test_failing_callback_does_not_stop_delivery(self) -> None:
        """Should keep delivering after a callback raises."""
        bus = EventBus()
        failing = Mock(side_effect=RuntimeError("boom"))
        after = Mock()
        bus.subscribe(EPOCH_END, failing)
        bus.subscribe(EPOCH_END, after)
        bus.emit(EPOCH_END, {"epoch": 0})
        after.assert_called_once()

    def test_emit_without_subscribers(self) -> None:
        """Should do nothing for events nobody listens to."""
        EventBus().emit(GENERATION_PROGRESS, {"done": 1, "total": 2})

    def test_emit_without_data_sends_empty_payload(self) -> None:
        """Should hand subscribers an empty dict when no data is given."""
        bus = EventBus()
        callback = Mock()
        bus.subscribe(EPOCH_END, callback)
        bus.emit(EPOCH_END)
        callback.assert_called_once_with({})

    def test_critical_callback_raises(self) -> None:
        """Should propagate the exception of a critical subscriber."""
        bus = EventBus()
        bus.subscribe(TRAIN_STEP, Mock(side_effect=OSError("disk full")), critical=True)
        with pytest.raises(OSError, match="disk full"):
            bus.emit(TRAIN_STEP, {"step": 1})

    def test_critical_only_for_its_event(self) -> None:
        """Should swallow the same callback's failure on events it is not critical for."""
        bus = EventBus()
        failing = Mock(side_effect=RuntimeError("boom"))
        bus.subscribe(TRAIN_STEP, failing, critical=True)
        bus.subscribe(EPOCH_END, failing)
        bus.emit(EPOCH_END, {"epoch": 0})
        failing.assert_called_once()


class TestEventBusSubscribed:
    """Tests for EventBus.subscribed()."""

    def test_scoped_subscription(self) -> None:
        """Should deliver inside the block and stop after it."""
        bus = EventBus()
        callback = Mock()
        with bus.subscribed(TRAIN_STEP, callback):
            bus.emit(TRAIN_STEP, {"step": 1})
        bus.emit(TRAIN_STEP, {"step": 2})
        callback.assert_called_once_with({"step": 1})

    def test_unsubscribes_on_error(self) -> None:
        """Should remove the callback even when the block raises."""
        bus = EventBus()
        callback = Mock()
        with pytest.raises(KeyError), bus.subscribed(TRAIN_STEP, callback):
            raise KeyError("x")
        assert bus._subscribers[TRAIN_STEP] == []

    def test_scoped_critical_subscription(self) -> None:
        """Should drop the critical flag when the block exits."""
        bus = EventBus()
        failing = Mock(side_effect=OSError("disk full"))
        with bus.subscribed(TRAIN_STEP, failing, critical=True), pytest.raises(OSError):
            bus.emit(TRAIN_STEP, {"step": 1})
        assert bus._critical[TRAIN_STEP] == []
        bus.subscribe(TRAIN_STEP, failing)
        bus.emit(TRAIN_STEP, {"step": 2})

    def test_event_names_are_strings(self) -> None:
        """Should key events by their plain string names."""
        assert Event.TRAIN_STEP == "train_step"
        assert TRAIN_STEP is Event.TRAIN_STEP

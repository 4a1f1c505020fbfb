"""Define tests for events."""
from deeper_fcdd import event


def test_on_and_unsubscribe():
    """Test that a listener runs until it unsubscribes."""
    mock = event.EventBase()
    calls = []
    unsubscribe = mock.on("test-event", calls.append)
    mock.emit("test-event", 1)
    unsubscribe()
    mock.emit("test-event", 2)
    assert calls == [1]


def test_once():
    """Test once listens to event once."""
    mock = event.EventBase()
    calls = []
    mock.once("test-event", calls.append)
    mock.emit("test-event", 1)
    mock.emit("test-event", 2)
    assert len(calls) == 1


def test_unknown_event():
    """Test that emitting without listeners does nothing."""
    event.EventBase().emit("nobody-listens", None)

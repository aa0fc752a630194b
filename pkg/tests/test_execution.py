from __future__ import annotations

import pytest

from poe.execution import AppState, ExecutionError, OutOfOrderApply, RollbackPastCommitted, parse_command


@pytest.mark.parametrize("payload, parsed", [
    (b"SET k v w", ("SET", "k", "v w")),
    (b"GET k", ("GET", "k")),
    (b"DEL k", ("DEL", "k")),
    (b"NOOP", ("NOOP",)),
    (b"SET k", None),
    (b"PUT k v", None),
    (b"\xff", None),
])
def test_parse_command(payload, parsed):
    assert parse_command(payload) == parsed


def test_results():
    app = AppState()
    assert app.apply(1, b"SET a 1") == b"OK"
    assert app.apply(2, b"GET a") == b"1"
    assert app.apply(3, b"GET b") == b"NIL"
    assert app.apply(4, b"DEL a") == b"1"
    assert app.apply(5, b"DEL a") == b"0"
    assert app.apply(6, b"bogus") == b"ERR malformed"
    assert app.data == {}


def test_apply_in_order_only():
    app = AppState()
    with pytest.raises(OutOfOrderApply):
        app.apply(2, b"NOOP")


def test_rollback_restores_state():
    app = AppState()
    app.apply(1, b"SET a 1")
    before = app.state_digest()
    app.apply(2, b"SET a 2")
    app.apply(3, b"SET b 3")
    app.apply(4, b"DEL a")
    app.rollback_to(1)
    assert app.data == {"a": "1"} and app.applied_prefix == 1
    assert app.state_digest() == before


def test_commit_floor_blocks_rollback():
    app = AppState()
    for r in range(1, 4):
        app.apply(r, f"SET k{r} v".encode())
    app.mark_committed(2)
    with pytest.raises(RollbackPastCommitted):
        app.rollback_to(1)
    app.rollback_to(2)
    assert sorted(app.data) == ["k1", "k2"]
    with pytest.raises(ExecutionError):
        app.mark_committed(5)


def test_digest_is_order_independent():
    a, b = AppState(), AppState()
    a.apply(1, b"SET x 1")
    a.apply(2, b"SET y 2")
    b.apply(1, b"SET y 2")
    b.apply(2, b"SET x 1")
    assert a.state_digest() == b.state_digest()

"""Replicated key-value application with speculative execution and rollback.

Commands are UTF-8 text: ``SET <key> <value>``, ``GET <key>``, ``DEL <key>``
and ``NOOP``. Anything else yields the deterministic result ``ERR malformed``
and leaves the state untouched.
"""
from __future__ import annotations

import hashlib
import struct

_MISSING = object()
_U32 = struct.Struct("<I")


class ExecutionError(Exception):
    pass


class OutOfOrderApply(ExecutionError):
    pass


class RollbackPastCommitted(ExecutionError):
    pass


def parse_command(payload: bytes) -> tuple[str, ...] | None:
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError:
        return None
    parts = text.split(" ", 2)
    op = parts[0]
    if op == "SET" and len(parts) == 3 and parts[1]:
        return ("SET", parts[1], parts[2])
    if op in ("GET", "DEL") and len(parts) == 2 and parts[1]:
        return (op, parts[1])
    if op == "NOOP" and len(parts) == 1:
        return ("NOOP",)
    return None


class AppState:
    def __init__(self) -> None:
        self.data: dict[str, str] = {}
        self.applied_prefix = 0
        self.committed_floor = 0
        # round -> (key, previous value or _MISSING) for every applied round
        # above the committed floor; None marks a round with no mutation
        self.journal: list[tuple[int, tuple[str, object] | None]] = []

    def apply(self, round_no: int, payload: bytes) -> bytes:
        if round_no != self.applied_prefix + 1:
            raise OutOfOrderApply(f"expected round {self.applied_prefix + 1}, got {round_no}")
        cmd = parse_command(payload)
        undo: tuple[str, object] | None = None
        if cmd is None:
            result = b"ERR malformed"
        elif cmd[0] == "SET":
            undo = (cmd[1], self.data.get(cmd[1], _MISSING))
            self.data[cmd[1]] = cmd[2]
            result = b"OK"
        elif cmd[0] == "GET":
            result = self.data.get(cmd[1], "NIL").encode()
        elif cmd[0] == "DEL":
            if cmd[1] in self.data:
                undo = (cmd[1], self.data.pop(cmd[1]))
                result = b"1"
            else:
                result = b"0"
        else:
            result = b"OK"
        self.journal.append((round_no, undo))
        self.applied_prefix = round_no
        return result

    def rollback_to(self, round_no: int) -> None:
        if round_no > self.applied_prefix:
            raise ExecutionError(f"cannot roll back forward to {round_no}")
        if round_no < self.committed_floor:
            raise RollbackPastCommitted(f"round {round_no} is below committed floor {self.committed_floor}")
        while self.journal and self.journal[-1][0] > round_no:
            _, undo = self.journal.pop()
            if undo is not None:
                key, old = undo
                if old is _MISSING:
                    self.data.pop(key, None)
                else:
                    self.data[key] = old  # type: ignore[assignment]
        self.applied_prefix = round_no

    def mark_committed(self, round_no: int) -> None:
        """Rounds up to ``round_no`` may never be rolled back; drop their undo records."""
        if round_no > self.applied_prefix:
            raise ExecutionError("cannot commit unapplied rounds")
        if round_no <= self.committed_floor:
            return
        self.committed_floor = round_no
        keep = 0
        while keep < len(self.journal) and self.journal[keep][0] <= round_no:
            keep += 1
        del self.journal[:keep]

    def state_digest(self) -> bytes:
        h = hashlib.sha256()
        for key in sorted(self.data):
            for part in (key.encode(), self.data[key].encode()):
                h.update(_U32.pack(len(part)))
                h.update(part)
        return h.digest()

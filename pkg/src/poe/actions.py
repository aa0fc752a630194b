"""Outputs of the replica and client step functions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable, Union

Address = Union[int, str]


@dataclass(frozen=True)
class Send:
    dest: Address
    msg: Any


@dataclass(frozen=True)
class Broadcast:
    """Send to every replica other than the emitter."""

    msg: Any


@dataclass(frozen=True)
class SetTimer:
    timer_id: Hashable
    duration: float


@dataclass(frozen=True)
class CancelTimer:
    timer_id: Hashable


@dataclass(frozen=True)
class Executed:
    round: int
    result: bytes
    view: int
    digest: bytes


@dataclass(frozen=True)
class RolledBack:
    to_round: int


@dataclass(frozen=True)
class Note:
    """A state transition worth tracing (commit, view entry, stage change, ...)."""

    event: str
    data: dict[str, Any] = field(default_factory=dict)


Action = Union[Send, Broadcast, SetTimer, CancelTimer, Executed, RolledBack, Note]

from __future__ import annotations

from dataclasses import dataclass, field

from .codec import wire


@wire(1)
@dataclass(frozen=True)
class Signature:
    identity: str
    value: bytes


@wire(2)
@dataclass(frozen=True)
class Share:
    scheme: str
    signer: str
    msg_digest: bytes
    value: bytes


@wire(3)
@dataclass(frozen=True)
class ThresholdSig:
    """Constant-size combined signature.

    ``signers`` is a local witness (sorted signer identities) kept for
    inspection; it is not part of the encoded form.
    """

    scheme: str
    value: bytes
    signers: tuple[str, ...] = field(default=(), compare=False, metadata={"wire": False})

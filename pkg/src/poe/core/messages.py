"""Wire messages, proposals and quorum certificates."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Union

from .codec import encode, signable, wire
from .evidence import Share, Signature, ThresholdSig

_I64 = struct.Struct("<q")
ZERO_DIGEST = bytes(32)


class QuorumError(ValueError):
    pass


def request_digest(req: "ClientRequest") -> bytes:
    cached = req.__dict__.get("_digest")
    if cached is None:
        cached = hashlib.sha256(encode(req)).digest()
        req.__dict__["_digest"] = cached
    return cached


@wire(10)
@dataclass(frozen=True)
class ClientRequest:
    client_id: str
    seq: int
    payload: bytes
    sig: Signature

    @property
    def request_id(self) -> str:
        return f"{self.client_id}#{self.seq}"


@wire(11)
@dataclass(frozen=True)
class Proposal:
    """The primary-signed statement that ``digest`` is the request for (view, round).

    ``request`` is embedded when proposals carry full requests and is ``None``
    in digest form.
    """

    view: int
    round: int
    digest: bytes
    request: ClientRequest | None
    sig: Signature

    @property
    def key(self) -> tuple[int, int, bytes]:
        return (self.view, self.round, self.digest)


@wire(12)
@dataclass(frozen=True)
class Vote:
    signer: int
    sig: Signature


@wire(13)
@dataclass(frozen=True)
class PreparedCertificate:
    proposal: Proposal
    votes: tuple[Vote, ...]
    tsig: ThresholdSig | None

    @classmethod
    def from_votes(cls, proposal: Proposal, votes: list[Vote] | tuple[Vote, ...], quorum: int) -> "PreparedCertificate":
        by_signer = {v.signer: v for v in votes}
        if len(by_signer) < quorum:
            raise QuorumError(f"prepared certificate needs {quorum} signers, got {len(by_signer)}")
        return cls(proposal, tuple(by_signer[s] for s in sorted(by_signer)), None)

    @classmethod
    def from_threshold(cls, proposal: Proposal, tsig: ThresholdSig, quorum: int) -> "PreparedCertificate":
        if len(tsig.signers) < quorum:
            raise QuorumError(f"threshold witness below {quorum}")
        return cls(proposal, (), tsig)

    @property
    def round(self) -> int:
        return self.proposal.round

    @property
    def view(self) -> int:
        return self.proposal.view

    @property
    def digest(self) -> bytes:
        return self.proposal.digest


@wire(14)
@dataclass(frozen=True)
class DummyCC:
    """The agreed commit certificate for round 0."""

    @property
    def round(self) -> int:
        return 0

    @property
    def top(self) -> int:
        return 0


@wire(15)
@dataclass(frozen=True)
class QuorumCC:
    """nf CheckCommit messages for one proposal."""

    proposal: Proposal
    votes: tuple[CheckCommit, ...]

    @classmethod
    def from_check_commits(cls, proposal: Proposal, msgs: list["CheckCommit"], quorum: int) -> "QuorumCC":
        by_sender = {}
        for m in msgs:
            if m.proposal.key != proposal.key:
                raise QuorumError("check-commit for a different proposal")
            by_sender.setdefault(m.sender, m)
        if len(by_sender) < quorum:
            raise QuorumError(f"commit certificate needs {quorum} signers, got {len(by_sender)}")
        return cls(proposal, tuple(by_sender[s] for s in sorted(by_sender)))

    @property
    def round(self) -> int:
        return self.proposal.round

    @property
    def top(self) -> int:
        return self.proposal.round


@wire(16)
@dataclass(frozen=True)
class LinearCC:
    """Threshold commit certificate over the window of rounds ending at ``round``.

    ``window`` optionally attaches the prepared certificates of the covered
    rounds (rounds below 1 are implicit defaults) so receivers can learn which
    requests it commits; it is empty when sent by the aggregator.
    """

    round: int
    view: int
    window_digest: bytes
    tsig: ThresholdSig
    window: tuple[PreparedCertificate, ...]

    @property
    def top(self) -> int:
        return self.round


CommitCertificate = Union[DummyCC, QuorumCC, LinearCC]


@wire(17)
@dataclass(frozen=True)
class RecoveryCertificate:
    round: int
    view: int
    window_digest: bytes
    tsig: ThresholdSig


def prepare_statement(proposal: Proposal) -> bytes:
    return b"prepare|" + encode(proposal)


def commit_statement(round_no: int, view: int, window_digest: bytes) -> bytes:
    return b"commit|" + _I64.pack(round_no) + _I64.pack(view) + window_digest


def window_entries(round_no: int, n: int, digests: dict[int, bytes]) -> list[tuple[int, bytes]]:
    """Rounds round_no-n+1 .. round_no paired with their request digests."""
    out = []
    for r in range(round_no - n + 1, round_no + 1):
        out.append((r, digests[r] if r >= 1 else ZERO_DIGEST))
    return out


def window_bytes(entries: list[tuple[int, bytes]]) -> bytes:
    return b"window|" + b"".join(_I64.pack(r) + d for r, d in entries)


# --- protocol messages ------------------------------------------------------


@wire(30)
@dataclass(frozen=True)
class Request:
    sender: str
    request: ClientRequest
    sig: Signature


@wire(31)
@dataclass(frozen=True)
class Propose:
    sender: int
    proposal: Proposal
    request: ClientRequest | None
    sig: Signature

    @property
    def client_request(self) -> ClientRequest | None:
        return self.proposal.request if self.proposal.request is not None else self.request


@wire(32)
@dataclass(frozen=True)
class Prepare:
    sender: int
    proposal: Proposal
    sig: Signature


@wire(33)
@dataclass(frozen=True)
class Inform:
    sender: int
    request_digest: bytes
    view: int
    round: int
    result: bytes
    sig: Signature


@wire(34)
@dataclass(frozen=True)
class CheckCommit:
    sender: int
    proposal: Proposal
    pc: PreparedCertificate | None
    sig: Signature


@wire(35)
@dataclass(frozen=True)
class Failure:
    sender: int
    view: int
    proof: tuple[Proposal, ...]
    sig: Signature


@wire(36)
@dataclass(frozen=True)
class ViewState:
    sender: int
    view: int
    cc: DummyCC | QuorumCC | LinearCC
    executed: tuple[PreparedCertificate, ...]
    requests: tuple[ClientRequest, ...]
    sig: Signature


@wire(37)
@dataclass(frozen=True)
class NewView:
    sender: int
    view: int
    states: tuple[ViewState, ...]
    sig: Signature


@wire(38)
@dataclass(frozen=True)
class QueryCC:
    sender: int
    round: int
    sig: Signature


@wire(39)
@dataclass(frozen=True)
class RespondCC:
    sender: int
    round: int
    pc: PreparedCertificate
    cc: DummyCC | QuorumCC | LinearCC
    requests: tuple[ClientRequest, ...]
    sig: Signature


@wire(40)
@dataclass(frozen=True)
class InformCC:
    sender: int
    request_digest: bytes
    round: int
    result: bytes
    sig: Signature


@wire(41)
@dataclass(frozen=True)
class Support:
    sender: int
    proposal: Proposal
    share: Share
    sig: Signature


@wire(42)
@dataclass(frozen=True)
class Certify:
    sender: int
    pc: PreparedCertificate
    sig: Signature


@wire(43)
@dataclass(frozen=True)
class SupportCC:
    sender: int
    round: int
    view: int
    window_digest: bytes
    share_nf: Share
    share_f1: Share
    sig: Signature


@wire(44)
@dataclass(frozen=True)
class RecoveryCC:
    sender: int
    rc: RecoveryCertificate
    sig: Signature


@wire(45)
@dataclass(frozen=True)
class CertifyCC:
    sender: int
    cc: LinearCC
    sig: Signature


@wire(46)
@dataclass(frozen=True)
class FetchPC:
    sender: int
    rounds: tuple[int, ...]
    sig: Signature


@wire(47)
@dataclass(frozen=True)
class ProvidePC:
    sender: int
    pcs: tuple[PreparedCertificate, ...]
    requests: tuple[ClientRequest, ...]
    sig: Signature


Message = Union[
    Request, Propose, Prepare, Inform, CheckCommit, Failure, ViewState, NewView,
    QueryCC, RespondCC, InformCC, Support, Certify, SupportCC, RecoveryCC, CertifyCC,
    FetchPC, ProvidePC,
]

MESSAGE_TYPES: tuple[type, ...] = Message.__args__  # type: ignore[attr-defined]

PROTOCOL_KINDS = tuple(t.__name__ for t in MESSAGE_TYPES)


def kind_of(msg: object) -> str:
    return type(msg).__name__


def signed_by(msg: object) -> bytes:
    return signable(msg)

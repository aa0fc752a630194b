"""Client state machine: submission, proof-of-execution and proof-of-commit."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Hashable

from .actions import Action, Broadcast, CancelTimer, Note, Send, SetTimer
from .auth import PublicAuth, Signer
from .core.codec import signable
from .core.config import SystemConfig, primary_of, quorums
from .core.evidence import Signature
from .core.messages import ClientRequest, Inform, InformCC, Request, request_digest
from .core.validation import Validator

PROOF_OF_EXECUTION = "proof-of-execution"
PROOF_OF_COMMIT = "proof-of-commit"


@dataclass(frozen=True)
class Outcome:
    request_id: str
    round: int
    result: bytes
    proof: str
    view: int | None
    time: float


class Client:
    def __init__(self, client_id: str, config: SystemConfig, signer: Signer, auth: PublicAuth,
                 validator: Validator | None = None) -> None:
        self.id = client_id
        self.cfg = config
        self.signer = signer
        self.validator = validator or Validator(config, auth)
        self.nf, self.f1 = quorums(config)
        self.believed_view = 0
        self.seq = 0
        self.requests: dict[bytes, ClientRequest] = {}
        self.by_id: dict[str, bytes] = {}
        self.informs: dict[bytes, dict[tuple[int, int, bytes], set[int]]] = {}
        self.inform_seen: dict[bytes, set[int]] = {}
        self.inform_ccs: dict[bytes, dict[tuple[int, bytes], set[int]]] = {}
        self.inform_cc_seen: dict[bytes, set[int]] = {}
        self.outcomes: dict[str, Outcome] = {}
        self.now = 0.0

    def make_request(self, payload: bytes, seq: int | None = None) -> ClientRequest:
        if seq is None:
            self.seq += 1
            seq = self.seq
        tmp = ClientRequest(self.id, seq, payload, Signature("", b""))
        return ClientRequest(self.id, seq, payload, self.signer.sign(signable(tmp)))

    def resend_period(self) -> float:
        return self.cfg.client_resend_factor * max(self.cfg.delta_of(i) for i in range(self.cfg.n))

    def submit(self, req: ClientRequest, now: float = 0.0) -> list[Action]:
        self.now = now
        d = request_digest(req)
        if req.request_id in self.outcomes:
            return []
        self.requests[d] = req
        self.by_id[req.request_id] = d
        msg = Request(self.id, req, self.signer.sign(signable(Request(self.id, req, Signature("", b"")))))
        return [Send(primary_of(self.believed_view, self.cfg), msg),
                SetTimer(("resend", d), self.resend_period())]

    def on_timer(self, timer_id: Hashable, now: float) -> list[Action]:
        self.now = now
        kind, d = timer_id
        req = self.requests.get(d)
        if kind != "resend" or req is None or req.request_id in self.outcomes:
            return []
        msg = Request(self.id, req, self.signer.sign(signable(Request(self.id, req, Signature("", b"")))))
        return [Broadcast(msg), SetTimer(timer_id, self.resend_period()), Note("resend", {"request": req.request_id})]

    def on_message(self, msg: Any, now: float) -> list[Action]:
        self.now = now
        if not self.validator.validate(msg):
            return []
        if isinstance(msg, Inform):
            out = self.on_inform(msg)
        elif isinstance(msg, InformCC):
            out = self.on_inform_cc(msg)
        else:
            return []
        if out is None:
            return []
        return [CancelTimer(("resend", msg.request_digest)), Note("outcome", {"request": out.request_id, "round": out.round,
                                 "result": out.result.hex(), "proof": out.proof, "view": out.view})]

    def on_inform(self, msg: Inform) -> Outcome | None:
        req = self.requests.get(msg.request_digest)
        if req is None or req.request_id in self.outcomes:
            return None
        self.believed_view = max(self.believed_view, msg.view)
        key = (msg.view, msg.round, msg.result)
        seen = self.inform_seen.setdefault(msg.request_digest, set())
        if (msg.sender, msg.view) in seen:
            return None
        seen.add((msg.sender, msg.view))
        tally = self.informs.setdefault(msg.request_digest, {}).setdefault(key, set())
        tally.add(msg.sender)
        if len(tally) >= self.nf:
            return self._close(req, msg.round, msg.result, PROOF_OF_EXECUTION, msg.view)
        return None

    def on_inform_cc(self, msg: InformCC) -> Outcome | None:
        req = self.requests.get(msg.request_digest)
        if req is None or req.request_id in self.outcomes:
            return None
        seen = self.inform_cc_seen.setdefault(msg.request_digest, set())
        if msg.sender in seen:
            return None
        seen.add(msg.sender)
        tally = self.inform_ccs.setdefault(msg.request_digest, {}).setdefault((msg.round, msg.result), set())
        tally.add(msg.sender)
        if len(tally) >= self.f1:
            return self._close(req, msg.round, msg.result, PROOF_OF_COMMIT, None)
        return None

    def _close(self, req: ClientRequest, rnd: int, result: bytes, proof: str, view: int | None) -> Outcome:
        out = Outcome(req.request_id, rnd, result, proof, view, self.now)
        self.outcomes[req.request_id] = out
        return out

"""Well-formedness rules for wire messages.

Checks run in a fixed order (arity, size, signatures, quorums, consistency)
and the first violated rule names the rejection. Verdicts are cached on the
immutable message objects, keyed by validator, so a broadcast received by many
replicas is checked once.
"""
from __future__ import annotations

import dataclasses
import itertools
import typing
from dataclasses import dataclass
from typing import Any

from .codec import DecodeError, _is_union, _schema, decode, encode, signable
from .config import SystemConfig, primary_of, quorums, replica_identity
from .evidence import Signature
from .messages import (
    MESSAGE_TYPES,
    CertifyCC,
    CheckCommit,
    ClientRequest,
    DummyCC,
    Failure,
    LinearCC,
    NewView,
    Prepare,
    PreparedCertificate,
    Propose,
    Proposal,
    ProvidePC,
    QuorumCC,
    RecoveryCC,
    Request,
    RespondCC,
    Support,
    SupportCC,
    ViewState,
    commit_statement,
    prepare_statement,
    request_digest,
    window_bytes,
)

BAD_ARITY = "bad-arity"
OVERSIZE = "oversize"
BAD_SIGNATURE = "bad-signature"
BAD_QUORUM = "bad-quorum"
ILL_FORMED = "ill-formed"

_tokens = itertools.count(1)


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: str | None = None
    rule: str = ""

    def __bool__(self) -> bool:
        return self.ok


WELL_FORMED = Verdict(True)


class Rejected(Exception):
    def __init__(self, reason: str, rule: str) -> None:
        super().__init__(f"{reason}: {rule}")
        self.reason = reason
        self.rule = rule


def _reject(reason: str, rule: str) -> typing.NoReturn:
    raise Rejected(reason, rule)


def _shape(value: Any, hint: Any, where: str) -> None:
    if _is_union(hint):
        args = typing.get_args(hint)
        if value is None:
            if type(None) not in args:
                _reject(BAD_ARITY, f"{where} is missing")
            return
        options = [a for a in args if a is not type(None)]
        for opt in options:
            if dataclasses.is_dataclass(opt) and isinstance(value, opt):
                _shape(value, opt, where)
                return
            if not dataclasses.is_dataclass(opt) and typing.get_origin(opt) is None and isinstance(value, opt):
                return
        if len(options) == 1:
            _shape(value, options[0], where)
            return
        _reject(BAD_ARITY, f"{where} has unexpected type {type(value).__name__}")
    if hint is int:
        if not isinstance(value, int) or isinstance(value, bool):
            _reject(BAD_ARITY, f"{where} must be an integer")
        return
    if hint in (bytes, str, bool):
        if not isinstance(value, hint):
            _reject(BAD_ARITY, f"{where} must be {hint.__name__}")
        return
    if typing.get_origin(hint) is tuple:
        if not isinstance(value, tuple):
            _reject(BAD_ARITY, f"{where} must be a tuple")
        inner = typing.get_args(hint)[0]
        for i, item in enumerate(value):
            _shape(item, inner, f"{where}[{i}]")
        return
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, hint):
            _reject(BAD_ARITY, f"{where} must be {hint.__name__}")
        if value.__dict__.get("_shape_ok"):
            return
        for name, sub in _schema(type(value)):
            _shape(getattr(value, name), sub, f"{where}.{name}")
        value.__dict__["_shape_ok"] = True
        return
    _reject(BAD_ARITY, f"{where}: unsupported type")


class Validator:
    """Message checker bound to one deployment (config and public keys)."""

    def __init__(self, config: SystemConfig, auth: Any) -> None:
        from ..auth import prepare_scheme, recovery_scheme

        self.config = config
        self.auth = auth
        self.nf, self.f1 = quorums(config)
        self.prepare_scheme = prepare_scheme(config)
        self.recovery_scheme = recovery_scheme(config)
        self.token = next(_tokens)
        self._attr = f"_v{self.token}"

    # -- cache helpers --
    def _cached(self, obj: Any) -> Verdict | None:
        return obj.__dict__.get(self._attr)

    def _remember(self, obj: Any, verdict: Verdict) -> Verdict:
        obj.__dict__[self._attr] = verdict
        return verdict

    # -- entry points --
    def validate(self, msg: Any) -> Verdict:
        if isinstance(msg, (bytes, bytearray)):
            try:
                msg = decode(bytes(msg))
            except (DecodeError, TypeError) as exc:
                return Verdict(False, BAD_ARITY, f"undecodable: {exc}")
        if not isinstance(msg, MESSAGE_TYPES):
            return Verdict(False, BAD_ARITY, f"not a protocol message: {type(msg).__name__}")
        hit = self._cached(msg)
        if hit is not None:
            return hit
        try:
            _shape(msg, type(msg), type(msg).__name__)
            self._sizes(msg)
            self._check(msg)
        except Rejected as exc:
            return self._remember(msg, Verdict(False, exc.reason, exc.rule))
        return self._remember(msg, WELL_FORMED)

    def check_pc(self, pc: PreparedCertificate) -> Verdict:
        try:
            _shape(pc, PreparedCertificate, "pc")
            self._pc(pc)
        except Rejected as exc:
            return Verdict(False, exc.reason, exc.rule)
        return WELL_FORMED

    def check_cc(self, cc: Any) -> Verdict:
        try:
            self._cc(cc)
        except Rejected as exc:
            return Verdict(False, exc.reason, exc.rule)
        return WELL_FORMED

    # -- size --
    def _sizes(self, obj: Any) -> None:
        if isinstance(obj, ClientRequest):
            if len(obj.payload) > self.config.request_bound:
                _reject(OVERSIZE, f"request payload {len(obj.payload)} > {self.config.request_bound}")
            return
        if dataclasses.is_dataclass(obj):
            mark = self._attr + "s"
            if obj.__dict__.get(mark):
                return
            for f in dataclasses.fields(obj):
                self._sizes(getattr(obj, f.name))
            obj.__dict__[mark] = True
        elif isinstance(obj, tuple):
            for item in obj:
                self._sizes(item)

    # -- signatures --
    def _sig(self, obj: Any, identity: str) -> None:
        if not isinstance(obj.sig, Signature) or not self.auth.verify(obj.sig, identity, signable(obj)):
            _reject(BAD_SIGNATURE, f"{type(obj).__name__} not signed by {identity}")

    def _replica(self, rid: int, where: str) -> None:
        if not 0 <= rid < self.config.n:
            _reject(BAD_ARITY, f"{where}: replica id {rid} out of range")

    def _request(self, req: ClientRequest) -> None:
        if req.__dict__.get(self._attr):
            return
        self._sig(req, req.client_id)
        req.__dict__[self._attr] = WELL_FORMED

    def _proposal(self, prop: Proposal) -> None:
        if prop.__dict__.get(self._attr):
            return
        if prop.view < 0 or prop.round < 1:
            _reject(ILL_FORMED, "proposal view/round out of range")
        self._sig(prop, replica_identity(primary_of(prop.view, self.config)))
        if prop.request is not None:
            self._request(prop.request)
            if request_digest(prop.request) != prop.digest:
                _reject(ILL_FORMED, "proposal digest does not match its request")
        elif self.config.carries_requests:
            _reject(BAD_ARITY, "proposal lacks its request")
        prop.__dict__[self._attr] = WELL_FORMED

    def _pc(self, pc: PreparedCertificate) -> None:
        cached = pc.__dict__.get(self._attr)
        if cached is not None:
            if not cached.ok:
                raise Rejected(cached.reason or BAD_QUORUM, cached.rule)
            return
        try:
            self._pc_inner(pc)
        except Rejected as exc:
            pc.__dict__[self._attr] = Verdict(False, exc.reason, exc.rule)
            raise
        pc.__dict__[self._attr] = WELL_FORMED

    def _pc_inner(self, pc: PreparedCertificate) -> None:
        self._proposal(pc.proposal)
        if pc.tsig is not None:
            if pc.votes:
                _reject(BAD_ARITY, "prepared certificate mixes votes and threshold signature")
            if not self.auth.threshold_verify(self.prepare_scheme, pc.tsig, prepare_statement(pc.proposal)):
                _reject(BAD_SIGNATURE, "prepared certificate threshold signature")
            return
        primary = primary_of(pc.proposal.view, self.config)
        signers = set()
        for vote in pc.votes:
            self._replica(vote.signer, "vote")
            ident = replica_identity(vote.signer)
            body = Prepare(vote.signer, pc.proposal, vote.sig)
            ok = self.auth.verify(vote.sig, ident, signable(body))
            if not ok and self.config.merge_primary_prepare and vote.signer == primary:
                ok = vote.sig == pc.proposal.sig
            if not ok:
                _reject(BAD_SIGNATURE, f"prepare vote of r{vote.signer}")
            signers.add(vote.signer)
        if len(signers) < self.nf:
            _reject(BAD_QUORUM, f"prepared certificate has {len(signers)} distinct signers, need {self.nf}")

    def _cc(self, cc: Any) -> None:
        if isinstance(cc, DummyCC):
            return
        cached = cc.__dict__.get(self._attr)
        if cached is not None:
            if not cached.ok:
                raise Rejected(cached.reason or BAD_QUORUM, cached.rule)
            return
        try:
            if isinstance(cc, QuorumCC):
                self._quorum_cc(cc)
            elif isinstance(cc, LinearCC):
                self._linear_cc(cc)
            else:
                _reject(BAD_ARITY, "unknown commit certificate")
        except Rejected as exc:
            cc.__dict__[self._attr] = Verdict(False, exc.reason, exc.rule)
            raise
        cc.__dict__[self._attr] = WELL_FORMED

    def _quorum_cc(self, cc: QuorumCC) -> None:
        if self.config.linear_mode:
            _reject(BAD_ARITY, "per-round commit certificate in linear mode")
        self._proposal(cc.proposal)
        signers = set()
        for vote in cc.votes:
            self._check_commit(vote)
            if vote.proposal.key != cc.proposal.key:
                _reject(ILL_FORMED, "commit vote for a different proposal")
            signers.add(vote.sender)
        if len(signers) < self.nf:
            _reject(BAD_QUORUM, f"commit certificate has {len(signers)} distinct signers, need {self.nf}")

    def _linear_cc(self, cc: LinearCC) -> None:
        if not self.config.linear_mode:
            _reject(BAD_ARITY, "linear commit certificate outside linear mode")
        if cc.round < 1:
            _reject(ILL_FORMED, "linear commit certificate round")
        stmt = commit_statement(cc.round, cc.view, cc.window_digest)
        if not self.auth.threshold_verify(self.prepare_scheme, cc.tsig, stmt):
            _reject(BAD_SIGNATURE, "linear commit certificate threshold signature")
        if cc.window:
            self._window(cc.round, cc.window_digest, cc.window)

    def _window(self, top: int, window_digest: bytes, pcs: tuple[PreparedCertificate, ...]) -> None:
        n = self.config.n
        lo = max(1, top - n + 1)
        rounds = [pc.round for pc in pcs]
        if rounds != list(range(lo, top + 1)):
            _reject(ILL_FORMED, "window certificates do not match covered rounds")
        for pc in pcs:
            self._pc(pc)
        entries = [(r, b"\x00" * 32) for r in range(top - n + 1, lo)]
        entries += [(pc.round, pc.digest) for pc in pcs]
        if self.auth.digest(window_bytes(entries)) != window_digest:
            _reject(ILL_FORMED, "window certificates do not hash to the certified digest")

    def _check_commit(self, msg: CheckCommit) -> None:
        cached = msg.__dict__.get(self._attr)
        if cached is not None:
            if not cached.ok:
                raise Rejected(cached.reason or BAD_SIGNATURE, cached.rule)
            return
        self._replica(msg.sender, "sender")
        self._sig(msg, replica_identity(msg.sender))
        self._proposal(msg.proposal)
        if self.config.carries_requests:
            if msg.pc is None:
                _reject(BAD_ARITY, "check-commit must carry a prepared certificate")
        if msg.pc is not None:
            self._pc(msg.pc)
            if msg.pc.proposal.key != msg.proposal.key:
                _reject(ILL_FORMED, "check-commit certificate for another proposal")

    def _view_state(self, vs: ViewState) -> None:
        self._replica(vs.sender, "sender")
        self._sig(vs, replica_identity(vs.sender))
        self._cc(vs.cc)
        if isinstance(vs.cc, LinearCC) and not vs.cc.window:
            _reject(ILL_FORMED, "view-state commit certificate lacks its window")
        for pc in vs.executed:
            self._pc(pc)
        for req in vs.requests:
            self._request(req)
        base = vs.cc.top
        rounds = [pc.round for pc in vs.executed]
        if rounds != list(range(base + 1, base + 1 + len(rounds))):
            _reject(ILL_FORMED, "executed certificates are not contiguous after the commit certificate")
        if not self.config.carries_requests:
            known = {request_digest(r) for r in vs.requests}
            needed = [pc.digest for pc in vs.executed]
            if isinstance(vs.cc, QuorumCC):
                needed.append(vs.cc.proposal.digest)
            elif isinstance(vs.cc, LinearCC):
                needed += [pc.digest for pc in vs.cc.window]
            if any(d not in known for d in needed):
                _reject(ILL_FORMED, "view-state lacks requests for its certificates")

    def _check(self, msg: Any) -> None:
        kind = type(msg)
        if kind is Request:
            self._sig(msg, msg.sender)
            self._request(msg.request)
            return
        self._replica(msg.sender, "sender")
        if kind is CheckCommit:
            self._check_commit(msg)
            return
        self._sig(msg, replica_identity(msg.sender))
        if kind is Propose:
            if msg.sender != primary_of(msg.proposal.view, self.config):
                _reject(BAD_SIGNATURE, "propose not sent by the view's primary")
            self._proposal(msg.proposal)
            req = msg.client_request
            if req is None:
                _reject(BAD_ARITY, "propose lacks its request")
            if msg.proposal.request is not None and msg.request is not None:
                _reject(BAD_ARITY, "propose carries its request twice")
            self._request(req)
            if request_digest(req) != msg.proposal.digest:
                _reject(ILL_FORMED, "propose request does not match digest")
        elif kind is Prepare:
            self._proposal(msg.proposal)
        elif kind is Failure:
            if msg.proof:
                if len(msg.proof) != 2:
                    _reject(BAD_ARITY, "equivocation proof needs two proposals")
                a, b = msg.proof
                self._proposal(a)
                self._proposal(b)
                if (a.view, a.round) != (b.view, b.round) or a.digest == b.digest:
                    _reject(ILL_FORMED, "equivocation proof does not conflict")
        elif kind is ViewState:
            self._view_state(msg)
        elif kind is NewView:
            if msg.sender != primary_of(msg.view, self.config):
                _reject(BAD_SIGNATURE, "new-view not sent by the view's primary")
            senders = set()
            for vs in msg.states:
                self._view_state(vs)
                if vs.view != msg.view - 1:
                    _reject(ILL_FORMED, "view-state for another view")
                senders.add(vs.sender)
            if len(senders) < self.nf or len(senders) != len(msg.states):
                _reject(BAD_QUORUM, f"new-view carries {len(senders)} distinct view-states, need {self.nf}")
        elif kind is RespondCC:
            self._pc(msg.pc)
            self._cc(msg.cc)
            for req in msg.requests:
                self._request(req)
            if isinstance(msg.cc, DummyCC):
                _reject(ILL_FORMED, "respond-cc with dummy certificate")
            if msg.pc.round != msg.round:
                _reject(ILL_FORMED, "respond-cc certificate for another round")
            if isinstance(msg.cc, QuorumCC):
                if msg.cc.proposal.round != msg.round or msg.cc.proposal.digest != msg.pc.digest:
                    _reject(ILL_FORMED, "respond-cc certificates disagree")
            elif isinstance(msg.cc, LinearCC):
                if not msg.cc.window:
                    _reject(ILL_FORMED, "respond-cc linear certificate lacks its window")
                if not any(pc.round == msg.round and pc.digest == msg.pc.digest for pc in msg.cc.window):
                    _reject(ILL_FORMED, "respond-cc certificate does not cover the round")
        elif kind is Support:
            self._proposal(msg.proposal)
            if msg.share.signer != replica_identity(msg.sender) or not self.auth.share_valid_for(
                msg.share, self.prepare_scheme, prepare_statement(msg.proposal)
            ):
                _reject(BAD_SIGNATURE, "support share")
        elif kind is SupportCC:
            stmt = commit_statement(msg.round, msg.view, msg.window_digest)
            ident = replica_identity(msg.sender)
            if msg.share_nf.signer != ident or not self.auth.share_valid_for(msg.share_nf, self.prepare_scheme, stmt):
                _reject(BAD_SIGNATURE, "support-cc commit share")
            if msg.share_f1.signer != ident or not self.auth.share_valid_for(msg.share_f1, self.recovery_scheme, stmt):
                _reject(BAD_SIGNATURE, "support-cc recovery share")
        elif kind is RecoveryCC:
            rc = msg.rc
            stmt = commit_statement(rc.round, rc.view, rc.window_digest)
            if not self.auth.threshold_verify(self.recovery_scheme, rc.tsig, stmt):
                _reject(BAD_SIGNATURE, "recovery certificate threshold signature")
        elif kind is CertifyCC:
            self._cc(msg.cc)
        elif kind is ProvidePC:
            for pc in msg.pcs:
                self._pc(pc)
            for req in msg.requests:
                self._request(req)
        else:
            # Inform, InformCC, QueryCC, FetchPC, Certify carry no extra evidence
            # beyond the sender signature, except Certify's certificate.
            pc = getattr(msg, "pc", None)
            if pc is not None:
                self._pc(pc)


def validate(msg: Any, config: SystemConfig, keys: Any) -> Verdict:
    """One-shot validation; simulations keep a long-lived :class:`Validator`."""
    return Validator(config, keys).validate(msg)


def encoded_size(msg: Any) -> int:
    return len(encode(msg))

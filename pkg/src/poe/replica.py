"""PoE replica as a deterministic step machine.

Every input (message or timer) goes through :meth:`Replica.on_message` or
:meth:`Replica.on_timer`, which return the list of output actions. Messages a
replica addresses to itself are processed locally, after the current handler,
without touching the network.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Hashable, Iterable

from .actions import Action, Broadcast, CancelTimer, Executed, Note, RolledBack, Send, SetTimer
from .auth import PublicAuth, Signer
from .core.codec import signable
from .core.config import SystemConfig, primary_of, quorums, replica_identity
from .core.evidence import Signature
from .core.messages import (
    CertifyCC,
    Certify,
    CheckCommit,
    ClientRequest,
    DummyCC,
    Failure,
    FetchPC,
    Inform,
    InformCC,
    LinearCC,
    NewView,
    Prepare,
    PreparedCertificate,
    Propose,
    Proposal,
    ProvidePC,
    QueryCC,
    QuorumCC,
    RecoveryCC,
    Request,
    RespondCC,
    Support,
    SupportCC,
    ViewState,
    Vote,
    request_digest,
)
from .core.validation import Validator
from .execution import AppState
from .linear import LinearMixin

NORMAL = "normal"
FAILED = "failure-detected"
CHANGING = "new-view-proposal"

_PLACEHOLDER = Signature("", b"")
_FUTURE_BUFFER_LIMIT = 4096


class IllFormedNewView(ValueError):
    pass


@dataclass(frozen=True)
class NewViewLedger:
    """The request sequence a NewView message fixes for the rounds it covers.

    ``entries`` maps every round up to ``r`` to a request digest, or to
    ``None`` for committed rounds whose request the NewView does not name
    (those are obtained through the query protocol).
    """

    view: int
    r_cc: int
    r: int
    entries: dict[int, bytes | None]
    requests: dict[bytes, ClientRequest]

    def digests(self) -> list[bytes | None]:
        return [self.entries[i] for i in range(1, self.r + 1)]


def _cc_rounds(cc: Any) -> dict[int, PreparedCertificate | Proposal]:
    if isinstance(cc, QuorumCC):
        return {cc.proposal.round: cc.proposal}
    if isinstance(cc, LinearCC):
        return {pc.round: pc.proposal for pc in cc.window}
    return {}


def derive_ledger(nv: NewView) -> NewViewLedger:
    committed: dict[int, set[bytes]] = {}
    prepared: dict[int, list[tuple[int, bytes]]] = {}
    requests: dict[bytes, ClientRequest] = {}
    r_cc = 0
    for vs in nv.states:
        r_cc = max(r_cc, vs.cc.top)
        for rnd, prop in _cc_rounds(vs.cc).items():
            committed.setdefault(rnd, set()).add(prop.digest)
            if prop.request is not None:
                requests[prop.digest] = prop.request
        for pc in vs.executed:
            prepared.setdefault(pc.round, []).append((pc.view, pc.digest))
            if pc.proposal.request is not None:
                requests[pc.digest] = pc.proposal.request
        for req in vs.requests:
            requests[request_digest(req)] = req
    r = max([r_cc, *prepared.keys()])
    entries: dict[int, bytes | None] = {}
    for rnd in range(1, r_cc + 1):
        found = committed.get(rnd)
        if found is None:
            entries[rnd] = None
        elif len(found) != 1:
            raise IllFormedNewView(f"round {rnd} committed to {len(found)} requests")
        else:
            entries[rnd] = next(iter(found))
    for rnd in range(r_cc + 1, r + 1):
        cands = prepared.get(rnd)
        if not cands:
            raise IllFormedNewView(f"no prepared request for round {rnd}")
        top = max(v for v, _ in cands)
        latest = {d for v, d in cands if v == top}
        if len(latest) != 1:
            raise IllFormedNewView(f"round {rnd} has {len(latest)} requests in view {top}")
        entries[rnd] = next(iter(latest))
    return NewViewLedger(nv.view, r_cc, r, entries, requests)


@dataclass
class Slot:
    """Local ledger entry for one round."""

    pc: PreparedCertificate | None = None
    executed: bool = False
    result: bytes | None = None
    cc: Any = None
    commit_pc: PreparedCertificate | None = None
    inform: Inform | None = None


class Replica(LinearMixin):
    def __init__(self, rid: int, config: SystemConfig, signer: Signer, auth: PublicAuth,
                 validator: Validator | None = None) -> None:
        self.id = rid
        self.identity = replica_identity(rid)
        self.cfg = config
        self.signer = signer
        self.auth = auth
        self.validator = validator or Validator(config, auth)
        self.nf, self.f1 = quorums(config)
        self.app = AppState()
        self.now = 0.0
        self._out: list[Action] = []
        self._local: deque[Any] = deque()
        self._backoff: Callable[[int], int] = config.backoff_fn()
        self._replica_ids = frozenset(replica_identity(i) for i in range(config.n))

        # ledger
        self.slots: dict[int, Slot] = {}
        self.executed_prefix = 0
        self.committed_prefix = 0
        self.executed_round_of: dict[bytes, int] = {}
        self.committed_round_of: dict[bytes, int] = {}
        self.known: dict[bytes, ClientRequest] = {}

        # normal case, keyed by view and round
        self.proposals: dict[tuple[int, int], Proposal] = {}
        self.prepare_votes: dict[tuple[int, int, bytes], dict[int, Vote]] = {}
        self.prepare_seen: dict[tuple[int, int], set[int]] = {}
        self.prepared_keys: set[tuple[int, int]] = set()
        self.cc_votes: dict[tuple[int, int, bytes], dict[int, CheckCommit]] = {}
        self.cc_voters: dict[tuple[int, int], set[int]] = {}
        self.cc_sent: dict[tuple[int, int], CheckCommit] = {}

        # requests and forwarding
        self.pending: dict[bytes, ClientRequest] = {}
        self.from_client: set[bytes] = set()
        self.expect_view: dict[bytes, int] = {}
        self.forward_times: dict[str, deque[float]] = {}

        # primary
        self.next_round = 1
        self.proposed: set[bytes] = set()
        self.reserved: set[bytes] = set()

        # view change
        self.view = 0
        self.entered_view = 0
        self.stage = NORMAL
        self.detected = -1
        self.failure_msg: Failure | None = None
        self.failure_reports: dict[int, int] = {}
        self.view_states: dict[int, dict[int, ViewState]] = {}
        self.new_view_sent: set[int] = set()
        self.accepted_nv: NewView | None = None
        self.nv_helped: dict[tuple[int, int], float] = {}
        self.vc_base = 0
        self.nv_rcc = 0
        self.nv_r = 0
        self.repropose_expected: dict[int, bytes] = {}
        self.carried: dict[int, PreparedCertificate] = {}
        self.ahead: dict[int, int] = {}
        self.repropose_missing: set[int] = set()
        self.future: dict[int, list[Any]] = {}
        self.await_view = -1

        # recovery
        self.querying: set[int] = set()
        self.pending_commits: dict[int, tuple[Any, dict[int, PreparedCertificate]]] = {}
        self.fetching: set[tuple[int, ...]] = set()
        self.gap_timers: set[int] = set()
        self.polling = False

        self._init_linear()

    # ------------------------------------------------------------------ api
    def start(self, now: float = 0.0) -> list[Action]:
        self.now = now
        self._out = []
        if self.cfg.catchup_poll:
            self._set_timer(("poll",), self.cfg.catchup_poll * self.cfg.delta_of(self.id))
        return self._flush()

    def on_message(self, msg: Any, now: float) -> list[Action]:
        self.now = now
        self._out = []
        if self.validator.validate(msg):
            self._dispatch(msg)
        return self._flush()

    def on_timer(self, timer_id: Hashable, now: float) -> list[Action]:
        self.now = now
        self._out = []
        self._timer(timer_id)
        return self._flush()

    def force_timeout(self, now: float) -> list[Action]:
        """Expire the failure-detection timer relevant to the current stage."""
        self.now = now
        self._out = []
        if self.stage == CHANGING:
            self.detect_failure(self.view + 1)
        else:
            self.detect_failure(self.view)
        return self._flush()

    def _flush(self) -> list[Action]:
        while self._local:
            self._dispatch(self._local.popleft())
        out, self._out = self._out, []
        return out

    # -------------------------------------------------------------- helpers
    def primary(self, view: int | None = None) -> int:
        return primary_of(self.view if view is None else view, self.cfg)

    def delta(self, view: int | None = None) -> float:
        view = self.view if view is None else view
        i = max(0, view - self.vc_base)
        factor = min(self._backoff(i), self.cfg.delta_cap_factor)
        return self.cfg.delta_of(self.id) * factor

    def _make(self, cls: type, **fields: Any) -> Any:
        tmp = cls(**fields, sig=_PLACEHOLDER)
        body = signable(tmp)
        obj = cls(**fields, sig=self.signer.sign(body))
        obj.__dict__["_signable_bytes"] = body
        return obj

    def _broadcast(self, msg: Any) -> None:
        self._out.append(Broadcast(msg))
        self._local.append(msg)

    def _send(self, dest: int | str, msg: Any) -> None:
        if dest == self.id:
            self._local.append(msg)
        else:
            self._out.append(Send(dest, msg))

    def _set_timer(self, timer_id: Hashable, duration: float) -> None:
        self._out.append(SetTimer(timer_id, duration))

    def _cancel_timer(self, timer_id: Hashable) -> None:
        self._out.append(CancelTimer(timer_id))

    def _note(self, event: str, **data: Any) -> None:
        self._out.append(Note(event, data))

    def participating(self, view: int) -> bool:
        return view == self.entered_view == self.view and self.stage != CHANGING

    def _buffer_if_future(self, view: int, msg: Any) -> bool:
        if view > self.entered_view:
            queue = self.future.setdefault(view, [])
            if len(queue) < _FUTURE_BUFFER_LIMIT:
                queue.append(msg)
            self._note_ahead(msg.sender, view)
            return True
        return False

    def _note_ahead(self, sender: int, view: int) -> None:
        """f+1 replicas working in later views mean an honest one left ours: treat it as failed."""
        if view <= self.ahead.get(sender, -1):
            return
        self.ahead[sender] = view
        if self.stage != NORMAL or sum(1 for v in self.ahead.values() if v > self.view) < self.f1:
            return
        self._note("behind", view=self.view)
        self.detect_failure(self.view)

    def _is_filler(self, req: ClientRequest) -> bool:
        return req.client_id in self._replica_ids

    def _request_of(self, pc: PreparedCertificate) -> ClientRequest | None:
        return pc.proposal.request or self.known.get(pc.digest)

    def last_cc(self, with_window: bool = True) -> Any:
        if self.committed_prefix == 0:
            return DummyCC()
        slot = self.slots[self.committed_prefix]
        if self.cfg.linear_mode and with_window:
            return self._cc_with_window(slot.cc)
        return slot.cc

    # ------------------------------------------------------------- dispatch
    def _dispatch(self, msg: Any) -> None:
        handler = _HANDLERS.get(type(msg))
        if handler is not None:
            handler(self, msg)

    def _timer(self, tid: Hashable) -> None:
        kind = tid[0]
        if kind == "expect":
            self._expect_fired(tid[1], tid[2])
        elif kind == "expect-round":
            _, v, rnd = tid
            if self.participating(v) and rnd > self.committed_prefix:
                self.detect_failure(v)
        elif kind == "expect-repropose":
            if self.participating(tid[1]) and self.repropose_missing:
                self.detect_failure(tid[1])
        elif kind == "await-nv":
            if self.stage == CHANGING and self.view == self.await_view:
                self.detect_failure(self.view + 1)
        elif kind == "failure-rebroadcast":
            if self.stage == FAILED and self.failure_msg is not None and self.failure_msg.view == self.view:
                self._broadcast(self.failure_msg)
                self._set_timer(("failure-rebroadcast",), self.delta())
        elif kind == "retx-cc":
            _, v, rnd = tid
            msg = self.cc_sent.get((v, rnd))
            if msg is not None and self.participating(v) and rnd > self.committed_prefix:
                self._broadcast(msg)
                self._set_timer(tid, 4 * self.delta())
        elif kind == "query":
            rnd = tid[1]
            if rnd > self.committed_prefix:
                self._broadcast(self._make(QueryCC, sender=self.id, round=rnd))
                self._set_timer(tid, 4 * self.delta())
            else:
                self.querying.discard(rnd)
        elif kind == "gap":
            rnd = tid[1]
            self.gap_timers.discard(rnd)
            for r in range(self.committed_prefix + 1, rnd):
                self._start_query(r)
        elif kind == "fetch":
            rounds = tid[1]
            if any(r > self.committed_prefix and not self._have_pc_for_fetch(r) for r in rounds):
                self._broadcast(self._make(FetchPC, sender=self.id, rounds=rounds))
            self.fetching.discard(rounds)
        elif kind == "poll":
            self._broadcast(self._make(QueryCC, sender=self.id, round=self.committed_prefix + 1))
            self.polling = True
            self._set_timer(tid, self.cfg.catchup_poll * self.cfg.delta_of(self.id))
        else:
            self._linear_timer(tid)

    # ------------------------------------------------------ client requests
    def _on_request(self, msg: Request) -> None:
        req = msg.request
        d = request_digest(req)
        self.known.setdefault(d, req)
        from_client = msg.sender == req.client_id
        self.on_committed_request(req, d, from_client)

    def on_committed_request(self, req: ClientRequest, d: bytes, from_client: bool) -> None:
        rnd = self.committed_round_of.get(d)
        if rnd is not None:
            if from_client:
                slot = self.slots[rnd]
                self._send(req.client_id, self._make(
                    InformCC, sender=self.id, request_digest=d, round=rnd, result=slot.result))
            return
        rnd = self.executed_round_of.get(d)
        if rnd is not None and from_client:
            inform = self.slots[rnd].inform
            if inform is not None:
                self._send(req.client_id, inform)
        if from_client:
            self.from_client.add(d)
        self.pending.setdefault(d, req)
        self.on_client_request(req, d, from_client)

    def on_client_request(self, req: ClientRequest, d: bytes, from_client: bool) -> None:
        if self.stage == CHANGING or self.entered_view != self.view:
            return
        if self.primary() == self.id:
            self._propose_pending()
        elif from_client:
            # a client resending an executed request still lacks its proof; expect the round to finish
            self._forward(req, d)

    def _forward(self, req: ClientRequest, d: bytes) -> None:
        if self.expect_view.get(d) == self.view:
            return
        window = self.forward_times.setdefault(req.client_id, deque())
        horizon = self.now - self.delta()
        while window and window[0] <= horizon:
            window.popleft()
        if len(window) >= self.cfg.forward_rate:
            return
        window.append(self.now)
        self._send(self.primary(), self._make(Request, sender=self.identity, request=req))
        self.expect_view[d] = self.view
        self._set_timer(("expect", d, self.view), 4 * self.delta())

    def _expect_fired(self, d: bytes, view: int) -> None:
        if self.expect_view.get(d) == view:
            del self.expect_view[d]
        if d in self.committed_round_of or d not in self.pending:
            return
        if self.participating(view) or (self.stage == FAILED and self.view == view):
            self.detect_failure(view)

    def _client_progress(self, client_id: str) -> None:
        """A proposal for this client arrived: the primary is live for its requests."""
        for d, v in self.expect_view.items():
            if v == self.view:
                req = self.pending.get(d)
                if req is not None and req.client_id == client_id:
                    self._set_timer(("expect", d, v), 4 * self.delta())

    # -------------------------------------------------------------- primary
    def _propose_pending(self) -> None:
        if self.primary() != self.id or not self.participating(self.view):
            return
        for d in list(self.pending):
            if self.next_round > self.committed_prefix + self.cfg.window:
                break
            if (d in self.proposed or d in self.executed_round_of or d in self.committed_round_of
                    or d in self.reserved):
                continue
            self._propose(self.pending[d], self.next_round)
            self.next_round += 1

    def _propose(self, req: ClientRequest, rnd: int) -> None:
        d = request_digest(req)
        self.proposed.add(d)
        embed = req if self.cfg.carries_requests else None
        prop = self._make(Proposal, view=self.view, round=rnd, digest=d, request=embed)
        msg = self._make(Propose, sender=self.id, proposal=prop, request=None if embed is not None else req)
        self._broadcast(msg)
        self._note("proposed", view=self.view, round=rnd, digest=d.hex())
        self._after_propose(msg)

    # ---------------------------------------------------------- normal case
    def _on_propose(self, msg: Propose) -> None:
        prop = msg.proposal
        v = prop.view
        if self._buffer_if_future(v, msg) or not self.participating(v):
            return
        if msg.sender != primary_of(v, self.cfg):
            return
        key = (v, prop.round)
        have = self.proposals.get(key)
        if have is not None:
            if have.digest != prop.digest:
                self._equivocation(have, prop)
            elif self.cfg.linear_mode and key not in self.prepared_keys:
                # a retransmitted Propose means our Support was lost
                self._support(prop)
            return
        expected = self.repropose_expected.get(prop.round)
        if expected is not None and expected != prop.digest:
            self.detect_failure(v)
            return
        if prop.round <= self.nv_rcc or (expected is None and prop.round <= self.committed_prefix):
            return
        req = msg.client_request
        self.proposals[key] = prop
        self.known.setdefault(prop.digest, req)
        self.repropose_missing.discard(prop.round)
        self._client_progress(req.client_id)
        if self.cfg.linear_mode:
            self._support(prop)
            return
        primary = primary_of(v, self.cfg)
        if self.cfg.merge_primary_prepare:
            self.prepare_votes.setdefault(prop.key, {}).setdefault(primary, Vote(primary, prop.sig))
            if self.id != primary:
                self._broadcast(self._make(Prepare, sender=self.id, proposal=prop))
        else:
            self._broadcast(self._make(Prepare, sender=self.id, proposal=prop))
        self._check_prepared(key)

    def _equivocation(self, a: Proposal, b: Proposal) -> None:
        self._note("equivocation", view=a.view, round=a.round)
        self.detect_failure(a.view, (a, b))

    def _on_prepare(self, msg: Prepare) -> None:
        prop = msg.proposal
        v = prop.view
        if self._buffer_if_future(v, msg) or not self.participating(v):
            return
        key = (v, prop.round)
        mine = self.proposals.get(key)
        if mine is not None and mine.digest != prop.digest:
            self._equivocation(mine, prop)
            return
        votes = self.prepare_votes.setdefault(prop.key, {})
        if msg.sender in votes:
            return
        votes[msg.sender] = Vote(msg.sender, msg.sig)
        if mine is None:
            seen = self.prepare_seen.setdefault(key, set())
            seen.add(msg.sender)
            if len(seen) == self.f1 and prop.round > self.committed_prefix:
                self._set_timer(("expect-round", v, prop.round), 4 * self.delta())
            return
        self._check_prepared(key)

    def _check_prepared(self, key: tuple[int, int]) -> None:
        if key in self.prepared_keys:
            return
        prop = self.proposals.get(key)
        if prop is None:
            return
        votes = self.prepare_votes.get(prop.key)
        if votes is None or len(votes) < self.nf:
            return
        self.prepared_keys.add(key)
        pc = PreparedCertificate.from_votes(prop, list(votes.values()), self.nf)
        self._store_pc(pc)

    def _store_pc(self, pc: PreparedCertificate) -> None:
        rnd = pc.round
        slot = self.slots.get(rnd)
        if slot is None:
            slot = self.slots[rnd] = Slot()
        if slot.pc is not None and slot.pc.view >= pc.view and slot.pc.digest == pc.digest:
            return
        if slot.executed:
            if slot.pc is not None and slot.pc.digest == pc.digest:
                slot.pc = pc
                self._after_progress()
            else:
                self._note("conflicting-pc-ignored", round=rnd, view=pc.view)
            return
        slot.pc = pc
        self._note("prepared", round=rnd, view=pc.view, digest=pc.digest.hex())
        self._try_execute()

    def _try_execute(self) -> None:
        while True:
            rnd = self.executed_prefix + 1
            slot = self.slots.get(rnd)
            if slot is None or slot.pc is None or slot.executed:
                break
            req = self._request_of(slot.pc)
            if req is None:
                self._missing_request(rnd)
                break
            result = self.app.apply(rnd, req.payload)
            slot.executed = True
            slot.result = result
            self.executed_prefix = rnd
            d = slot.pc.digest
            self.executed_round_of[d] = rnd
            self._out.append(Executed(rnd, result, slot.pc.view, d))
            if self.expect_view.get(d) == self.view:
                # linear commits may wait for a filler round behind a faulty aggregator
                patience = 16 if self.cfg.linear_mode else 4
                self._set_timer(("expect", d, self.view), patience * self.delta())
            if not self._is_filler(req):
                inform = self._make(Inform, sender=self.id, request_digest=d, view=slot.pc.view,
                                    round=rnd, result=result)
                slot.inform = inform
                self._send(req.client_id, inform)
        self._after_progress()

    def _missing_request(self, rnd: int) -> None:
        if self.cfg.linear_mode or not self.cfg.carries_requests:
            self._fetch((rnd,), None)

    def _after_progress(self) -> None:
        if self.cfg.linear_mode:
            self._linear_progress()
        else:
            self.start_check_commit(self.committed_prefix + 1)
            self._try_store_cc()
        self._drain_pending_commits()

    # --------------------------------------------------------- check-commit
    def start_check_commit(self, rnd: int) -> None:
        if rnd != self.committed_prefix + 1:
            return
        slot = self.slots.get(rnd)
        if slot is None or not slot.executed or slot.pc is None:
            return
        v = slot.pc.view
        if not self.participating(v) or (v, rnd) in self.cc_sent:
            return
        carry = slot.pc if self.cfg.carries_requests else None
        msg = self._make(CheckCommit, sender=self.id, proposal=slot.pc.proposal, pc=carry)
        self.cc_sent[(v, rnd)] = msg
        self._broadcast(msg)
        if self.cfg.retransmit:
            self._set_timer(("retx-cc", v, rnd), 4 * self.delta())

    def _on_check_commit(self, msg: CheckCommit) -> None:
        prop = msg.proposal
        v = prop.view
        if self._buffer_if_future(v, msg) or not self.participating(v):
            return
        rnd = prop.round
        voters = self.cc_voters.setdefault((v, rnd), set())
        if msg.sender in voters:
            return
        voters.add(msg.sender)
        votes = self.cc_votes.setdefault(prop.key, {})
        votes[msg.sender] = msg
        slot = self.slots.get(rnd)
        prepared_here = slot is not None and slot.pc is not None and slot.pc.view == v
        if not prepared_here and rnd > self.committed_prefix and (slot is None or not slot.executed):
            if msg.pc is not None:
                self._note("adopt", round=rnd, view=v)
                self.known.setdefault(prop.digest, msg.pc.proposal.request)
                self._store_pc(msg.pc)
            elif len(votes) >= self.f1:
                self._fetch((rnd,), msg.sender)
        self._try_store_cc()
        if rnd > self.committed_prefix + 1 and len(voters) >= self.f1 and rnd not in self.gap_timers:
            self.gap_timers.add(rnd)
            self._set_timer(("gap", rnd), 2 * self.delta())

    def _try_store_cc(self) -> None:
        while True:
            rnd = self.committed_prefix + 1
            slot = self.slots.get(rnd)
            if slot is None or not slot.executed or slot.pc is None:
                return
            pc = slot.pc
            if not self.participating(pc.view):
                return
            votes = self.cc_votes.get(pc.proposal.key)
            if votes is None or len(votes) < self.nf:
                return
            cc = QuorumCC.from_check_commits(pc.proposal, list(votes.values()), self.nf)
            self._commit_round(rnd, cc, pc)
            self.vc_base = max(self.vc_base, self.view)
            self.start_check_commit(rnd + 1)

    def _commit_round(self, rnd: int, cc: Any, pc: PreparedCertificate) -> None:
        slot = self.slots[rnd]
        slot.cc = cc
        slot.commit_pc = pc
        self.committed_prefix = rnd
        self.committed_round_of[pc.digest] = rnd
        self.app.mark_committed(rnd)
        self.pending.pop(pc.digest, None)
        self.from_client.discard(pc.digest)
        self.expect_view.pop(pc.digest, None)
        self.querying.discard(rnd)
        self._note("commit", round=rnd, view=pc.view, digest=pc.digest.hex())
        if self.primary() == self.id:
            self._propose_pending()
        elif self._window_was_full(rnd - 1):
            # the primary could not propose before this commit freed its window
            for d, v in self.expect_view.items():
                if v == self.view and d in self.pending:
                    self._set_timer(("expect", d, v), 4 * self.delta())

    def _window_was_full(self, prefix: int) -> bool:
        top = max((r for v, r in self.proposals if v == self.view), default=0)
        return top >= prefix + self.cfg.window

    # -------------------------------------------------------- view change
    def detect_failure(self, view: int, proof: tuple[Proposal, ...] = ()) -> None:
        if view < self.view or view <= self.detected:
            return
        if self.stage == CHANGING and view == self.view:
            return
        self.detected = view
        if view > self.view:
            self.view = view
        self.stage = FAILED
        self._note("failure_detected", view=view)
        self.failure_msg = self._make(Failure, sender=self.id, view=view, proof=proof)
        self._broadcast(self.failure_msg)
        self._set_timer(("failure-rebroadcast",), self.delta())

    def _on_failure(self, msg: Failure) -> None:
        u = msg.view
        target = self.view + 1 if self.stage == CHANGING else self.view
        if msg.proof and u >= target and u > self.detected:
            self.detect_failure(u, msg.proof)
        if u > self.failure_reports.get(msg.sender, -1):
            self.failure_reports[msg.sender] = u
        if (u <= self.entered_view and self.accepted_nv is not None and self.stage == NORMAL
                and msg.sender != self.id):
            key = (msg.sender, u)
            last = self.nv_helped.get(key)
            if last is None or self.now - last >= 8 * self.delta():
                self.nv_helped[key] = self.now
                self._send(msg.sender, self.accepted_nv)
        self._check_failure_quorum()

    def _check_failure_quorum(self) -> None:
        target = self.view + 1 if self.stage == CHANGING else self.view
        reports = sorted((u for u in self.failure_reports.values() if u >= target), reverse=True)
        if len(reports) >= self.f1:
            u_star = reports[self.f1 - 1]
            if u_star > self.detected:
                self.detect_failure(u_star)
        if self.stage == FAILED:
            count = sum(1 for u in self.failure_reports.values() if u >= self.view)
            if count >= self.nf:
                self.enter_proposal_stage(self.view)

    def enter_proposal_stage(self, view: int) -> None:
        self.stage = CHANGING
        self.await_view = view
        self._cancel_timer(("failure-rebroadcast",))
        # rounds rolled back while awaiting reproposal still report the certificate they were accepted with
        chain = []
        rnd = self.committed_prefix + 1
        while True:
            slot = self.slots.get(rnd)
            pc = slot.pc if slot is not None and slot.executed else self.carried.get(rnd)
            if pc is None:
                break
            chain.append(pc)
            rnd += 1
        executed = tuple(chain)
        cc = self.last_cc()
        requests: tuple[ClientRequest, ...] = ()
        if not self.cfg.carries_requests:
            digests = [pc.digest for pc in executed]
            if isinstance(cc, QuorumCC):
                digests.append(cc.proposal.digest)
            elif isinstance(cc, LinearCC):
                digests += [pc.digest for pc in cc.window]
            seen: dict[bytes, ClientRequest] = {}
            for d in digests:
                seen.setdefault(d, self.known[d])
            requests = tuple(seen.values())
        vs = self._make(ViewState, sender=self.id, view=view, cc=cc, executed=executed, requests=requests)
        self._note("proposal_stage", view=view)
        self._send(primary_of(view + 1, self.cfg), vs)
        self._set_timer(("await-nv",), 4 * self.delta(view + 1))

    def _on_view_state(self, msg: ViewState) -> None:
        self.on_view_state(msg)

    def on_view_state(self, msg: ViewState) -> None:
        nxt = msg.view + 1
        if primary_of(nxt, self.cfg) != self.id or nxt <= self.entered_view or nxt in self.new_view_sent:
            return
        states = self.view_states.setdefault(msg.view, {})
        states.setdefault(msg.sender, msg)
        if len(states) >= self.nf:
            chosen = tuple(list(states.values())[: self.nf])
            self.new_view_sent.add(nxt)
            self._broadcast(self._make(NewView, sender=self.id, view=nxt, states=chosen))

    def _on_new_view(self, msg: NewView) -> None:
        w = msg.view
        if w <= self.entered_view or self.view > w or self.detected >= w:
            return
        if self.stage == CHANGING and self.view == w:
            return
        try:
            ledger = derive_ledger(msg)
        except IllFormedNewView as exc:
            self._note("ill_formed_new_view", view=w, reason=str(exc))
            self.detect_failure(w)
            return
        self.on_new_view(msg, ledger)

    def on_new_view(self, msg: NewView, ledger: NewViewLedger) -> None:
        w = msg.view
        self.view = w
        self.entered_view = w
        self.stage = NORMAL
        self.detected = max(self.detected, w - 1)
        self.accepted_nv = msg
        self.failure_msg = None
        self._cancel_timer(("await-nv",))
        self._cancel_timer(("failure-rebroadcast",))
        self.proposals = {k: p for k, p in self.proposals.items() if k[0] >= w}
        self.prepare_votes = {k: p for k, p in self.prepare_votes.items() if k[0] >= w}
        self.prepare_seen = {k: p for k, p in self.prepare_seen.items() if k[0] >= w}
        self.prepared_keys = {k for k in self.prepared_keys if k[0] >= w}
        self.cc_votes = {k: p for k, p in self.cc_votes.items() if k[0] >= w}
        self.cc_voters = {k: p for k, p in self.cc_voters.items() if k[0] >= w}
        self.cc_sent = {k: p for k, p in self.cc_sent.items() if k[0] >= w}
        self.proposed = set()
        self._linear_new_view(w)
        for d, req in ledger.requests.items():
            self.known.setdefault(d, req)

        target = self.executed_prefix
        for rnd in range(self.committed_prefix + 1, self.executed_prefix + 1):
            expected = ledger.entries.get(rnd)
            if rnd > ledger.r_cc or (expected is not None and expected != self.slots[rnd].pc.digest):
                target = rnd - 1
                break
        self._rollback(target, keep_view=w)
        self.nv_rcc = ledger.r_cc
        self.nv_r = ledger.r
        self.repropose_expected = {r: ledger.entries[r] for r in range(ledger.r_cc + 1, ledger.r + 1)}
        self.repropose_missing = set(self.repropose_expected)
        self.carried = {}
        for vs in msg.states:
            for pc in vs.executed:
                if (self.repropose_expected.get(pc.round) == pc.digest
                        and pc.view >= getattr(self.carried.get(pc.round), "view", -1)):
                    self.carried[pc.round] = pc
        self.reserved = {d for d in ledger.entries.values() if d is not None}
        self._note("view_entered", view=w, r_cc=ledger.r_cc, r=ledger.r)
        for rnd in range(self.committed_prefix + 1, ledger.r_cc + 1):
            self._start_query(rnd)
        if self.repropose_missing:
            self._set_timer(("expect-repropose", w), 4 * self.delta(w))
        if self.primary(w) == self.id:
            self.next_round = max(ledger.r, self.committed_prefix) + 1
            for rnd in sorted(self.repropose_expected):
                d = self.repropose_expected[rnd]
                self._propose(self.known[d], rnd)
            self._propose_pending()
        else:
            for d in list(self.pending):
                if d in self.from_client and d not in self.committed_round_of:
                    self._forward(self.pending[d], d)
        for v in sorted(self.future):
            if v <= w:
                msgs = self.future.pop(v)
                if v == w:
                    self._local.extend(msgs)

    def _rollback(self, target: int, keep_view: int | None = None) -> None:
        """Undo execution above ``target``; keep prepared certificates of ``keep_view``."""
        keep = self.entered_view if keep_view is None else keep_view
        if target < self.executed_prefix:
            for rnd in range(target + 1, self.executed_prefix + 1):
                slot = self.slots[rnd]
                d = slot.pc.digest
                if self.executed_round_of.get(d) == rnd:
                    del self.executed_round_of[d]
                slot.executed = False
                slot.result = None
                slot.inform = None
            self.app.rollback_to(target)
            self.executed_prefix = target
            self._out.append(RolledBack(target))
        for rnd in [r for r in self.slots if r > target]:
            slot = self.slots[rnd]
            if slot.pc is None or slot.pc.view < keep:
                del self.slots[rnd]

    # -------------------------------------------------------------- queries
    def _start_query(self, rnd: int) -> None:
        if rnd in self.querying or rnd <= self.committed_prefix:
            return
        self.querying.add(rnd)
        self._broadcast(self._make(QueryCC, sender=self.id, round=rnd))
        self._set_timer(("query", rnd), 4 * self.delta())

    def _on_query_cc(self, msg: QueryCC) -> None:
        if msg.sender == self.id:
            return
        self.on_query_cc(msg)

    def on_query_cc(self, msg: QueryCC) -> None:
        slot = self.slots.get(msg.round)
        if slot is None or slot.cc is None or msg.round < 1:
            return
        cc = self._cc_with_window(slot.cc) if self.cfg.linear_mode else slot.cc
        requests: tuple[ClientRequest, ...] = ()
        if not self.cfg.carries_requests:
            pcs = list(cc.window) if isinstance(cc, LinearCC) else [slot.commit_pc]
            requests = tuple({pc.digest: self.known[pc.digest] for pc in pcs}.values())
        self._send(msg.sender, self._make(RespondCC, sender=self.id, round=msg.round, pc=slot.commit_pc,
                                          cc=cc, requests=requests))

    def _on_respond_cc(self, msg: RespondCC) -> None:
        self.on_respond_cc(msg)

    def on_respond_cc(self, msg: RespondCC) -> None:
        for req in msg.requests:
            self.known.setdefault(request_digest(req), req)
        cc = msg.cc
        if isinstance(cc, LinearCC):
            pcs = {pc.round: pc for pc in cc.window}
            top = cc.round
        else:
            pcs = {msg.round: msg.pc}
            top = msg.round
            if msg.pc.proposal.request is not None:
                self.known.setdefault(msg.pc.digest, msg.pc.proposal.request)
        if top <= self.committed_prefix:
            return
        self.pending_commits.setdefault(top, (cc, pcs))
        before = self.committed_prefix
        self._drain_pending_commits()
        if self.polling and self.committed_prefix > before:
            self._broadcast(self._make(QueryCC, sender=self.id, round=self.committed_prefix + 1))

    def _drain_pending_commits(self) -> None:
        if not self.pending_commits or getattr(self, "_draining", False):
            return
        self._draining = True
        try:
            progress = True
            while progress:
                progress = False
                for top in sorted(self.pending_commits):
                    cc, pcs = self.pending_commits[top]
                    if top <= self.committed_prefix:
                        del self.pending_commits[top]
                        continue
                    span = self.cfg.n if isinstance(cc, LinearCC) else 1
                    if self.committed_prefix < top - span:
                        continue
                    rounds = range(self.committed_prefix + 1, top + 1)
                    if not self._adopt_rounds(rounds, pcs):
                        continue
                    del self.pending_commits[top]
                    for rnd in rounds:
                        self._commit_round(rnd, cc, self.slots[rnd].pc)
                    progress = True
                    break
        finally:
            self._draining = False
        self._after_commit_progress()

    def _after_commit_progress(self) -> None:
        if self.cfg.linear_mode:
            self._linear_progress()
        else:
            self.start_check_commit(self.committed_prefix + 1)
            self._try_store_cc()

    def _adopt_rounds(self, rounds: Iterable[int], pcs: dict[int, PreparedCertificate]) -> bool:
        """Make the local ledger hold exactly ``pcs`` for ``rounds``; True once all are executed."""
        rounds = list(rounds)
        for rnd in rounds:
            pc = pcs.get(rnd)
            if pc is None:
                return False
            slot = self.slots.get(rnd)
            if slot is not None and slot.pc is not None and slot.pc.digest != pc.digest:
                if slot.executed:
                    self._rollback(rnd - 1)
                slot = self.slots.get(rnd)
                if slot is not None:
                    slot.pc = None
            if slot is None:
                slot = self.slots[rnd] = Slot()
            if slot.pc is None:
                slot.pc = pc
        self._try_execute_only()
        return self.executed_prefix >= rounds[-1]

    def _try_execute_only(self) -> None:
        draining = getattr(self, "_draining", False)
        self._draining = True
        try:
            self._try_execute()
        finally:
            self._draining = draining

    # --------------------------------------------------------------- fetch
    def _have_pc_for_fetch(self, rnd: int) -> bool:
        slot = self.slots.get(rnd)
        return slot is not None and slot.pc is not None and self._request_of(slot.pc) is not None

    def _fetch(self, rounds: tuple[int, ...], source: int | None) -> None:
        if rounds in self.fetching:
            return
        self.fetching.add(rounds)
        msg = self._make(FetchPC, sender=self.id, rounds=rounds)
        if source is None or source == self.id:
            self._broadcast(msg)
        else:
            self._send(source, msg)
        self._set_timer(("fetch", rounds), 4 * self.delta())

    def _on_fetch_pc(self, msg: FetchPC) -> None:
        if msg.sender == self.id:
            return
        pcs = []
        reqs: dict[bytes, ClientRequest] = {}
        for rnd in msg.rounds:
            slot = self.slots.get(rnd)
            if slot is None or slot.pc is None:
                continue
            req = self._request_of(slot.pc)
            if req is None:
                continue
            pcs.append(slot.pc)
            reqs.setdefault(slot.pc.digest, req)
        if pcs:
            self._send(msg.sender, self._make(ProvidePC, sender=self.id, pcs=tuple(pcs),
                                              requests=tuple(reqs.values())))

    def _on_provide_pc(self, msg: ProvidePC) -> None:
        for req in msg.requests:
            self.known.setdefault(request_digest(req), req)
        if self.cfg.linear_mode:
            self._linear_provided(msg.pcs)
            return
        for pc in msg.pcs:
            if self._request_of(pc) is None:
                continue
            slot = self.slots.get(pc.round)
            if pc.round <= self.committed_prefix or (slot is not None and slot.executed):
                continue
            if self.participating(pc.view):
                self._store_pc(pc)
        self._try_execute()

    # -------------------------------------------------------------- export
    def ledger(self) -> list[tuple[int, str, int]]:
        out = []
        for rnd in range(1, self.executed_prefix + 1):
            slot = self.slots[rnd]
            out.append((rnd, slot.pc.digest.hex(), slot.pc.view))
        return out

    def committed_ledger(self) -> list[str]:
        return [self.slots[r].pc.digest.hex() for r in range(1, self.committed_prefix + 1)]

    def snapshot(self) -> dict[str, Any]:
        return {
            "view": self.view,
            "entered_view": self.entered_view,
            "stage": self.stage,
            "executed_prefix": self.executed_prefix,
            "committed_prefix": self.committed_prefix,
            "executed": [[r, d, v] for r, d, v in self.ledger()],
            "committed": self.committed_ledger(),
            "results": [self.slots[r].result.hex() for r in range(1, self.executed_prefix + 1)],
            "fillers": [r for r in range(1, self.executed_prefix + 1)
                        if self._is_filler(self._request_of(self.slots[r].pc))],
            "state_digest": self.app.state_digest().hex(),
        }


_HANDLERS: dict[type, Callable[[Replica, Any], None]] = {
    Request: Replica._on_request,
    Propose: Replica._on_propose,
    Prepare: Replica._on_prepare,
    CheckCommit: Replica._on_check_commit,
    Failure: Replica._on_failure,
    ViewState: Replica._on_view_state,
    NewView: Replica._on_new_view,
    QueryCC: Replica._on_query_cc,
    RespondCC: Replica._on_respond_cc,
    FetchPC: Replica._on_fetch_pc,
    ProvidePC: Replica._on_provide_pc,
    Support: LinearMixin._on_support,
    Certify: LinearMixin._on_certify,
    SupportCC: LinearMixin._on_support_cc,
    RecoveryCC: LinearMixin._on_recovery_cc,
    CertifyCC: LinearMixin._on_certify_cc,
}

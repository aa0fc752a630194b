"""Linear-PoE: threshold-signed prepare path and rotating-aggregator check-commit.

Mixed into :class:`poe.replica.Replica`; every method here runs inside the
replica's step function and uses its helpers (``_make``, ``_send``, ...).
"""
from __future__ import annotations

from typing import Any, Hashable

from .auth import AuthError, prepare_scheme, recovery_scheme
from .core.codec import signable
from .core.config import aggregator_of, primary_of
from .core.messages import (
    Certify,
    CertifyCC,
    ClientRequest,
    LinearCC,
    PreparedCertificate,
    Proposal,
    Propose,
    RecoveryCC,
    RecoveryCertificate,
    Support,
    SupportCC,
    commit_statement,
    prepare_statement,
    request_digest,
    window_bytes,
    window_entries,
)


class LinearMixin:
    def _init_linear(self) -> None:
        self.prepare_scheme = prepare_scheme(self.cfg)
        self.recovery_scheme = recovery_scheme(self.cfg)
        # primary side of the prepare path
        self.support_shares: dict[tuple[int, int, bytes], dict[int, Any]] = {}
        self.certified: set[tuple[int, int]] = set()
        # check-commit side
        self.scc_sent: dict[tuple[int, int], SupportCC] = {}
        self.scc_tally: dict[tuple[int, int, bytes], dict[int, SupportCC]] = {}
        self.rc_sent: set[tuple[int, int, bytes]] = set()
        self.agg_done: dict[int, CertifyCC] = {}
        self.agg_senders: dict[int, set[int]] = {}
        self.linear_ccs: dict[int, LinearCC] = {}
        self.recovery_targets: dict[int, RecoveryCertificate] = {}
        self.pc_batches: list[dict[int, PreparedCertificate]] = []
        self._windowed: dict[int, LinearCC] = {}
        self.filler_seq = 0
        # latest Propose or Certify this primary sent per (view, round), for retransmission
        self.prepare_sent: dict[tuple[int, int], Any] = {}

    # --------------------------------------------------------------- window
    def window_digest(self, top: int, digests: dict[int, bytes]) -> bytes:
        return self.auth.digest(window_bytes(window_entries(top, self.cfg.n, digests)))

    def _window_rounds(self, top: int) -> range:
        return range(max(1, top - self.cfg.n + 1), top + 1)

    def _cc_with_window(self, cc: Any) -> Any:
        if not isinstance(cc, LinearCC) or cc.window:
            return cc
        have = self._windowed.get(cc.round)
        if have is not None and have.tsig == cc.tsig:
            return have
        pcs = tuple(self.slots[r].commit_pc or self.slots[r].pc for r in self._window_rounds(cc.round))
        full = LinearCC(cc.round, cc.view, cc.window_digest, cc.tsig, pcs)
        self._windowed[cc.round] = full
        return full

    # -------------------------------------------------------- prepare path
    def _after_propose(self, msg: Propose) -> None:
        if not self.cfg.linear_mode:
            return
        self.prepare_sent[(msg.proposal.view, msg.proposal.round)] = msg
        if self.cfg.linear_filler:
            self._set_timer(("filler",), 8 * self.delta())

    def _support(self, prop: Proposal) -> None:
        share = self.signer.share(self.prepare_scheme, prepare_statement(prop))
        msg = self._make(Support, sender=self.id, proposal=prop, share=share)
        self._send(primary_of(prop.view, self.cfg), msg)

    def on_support(self, msg: Support) -> None:
        prop = msg.proposal
        v = prop.view
        if primary_of(v, self.cfg) != self.id or not self.participating(v):
            return
        key = (v, prop.round)
        mine = self.proposals.get(key)
        if mine is None or mine.digest != prop.digest or key in self.certified:
            return
        shares = self.support_shares.setdefault(prop.key, {})
        shares.setdefault(msg.sender, msg.share)
        if len(shares) < self.nf:
            return
        try:
            tsig = self.auth.threshold_combine(self.prepare_scheme, shares.values())
        except AuthError:
            return
        self.certified.add(key)
        pc = PreparedCertificate.from_threshold(mine, tsig, self.nf)
        out = self._make(Certify, sender=self.id, pc=pc)
        self.prepare_sent[key] = out
        self._broadcast(out)

    def on_certify(self, msg: Certify) -> None:
        pc = msg.pc
        v = pc.view
        if self._buffer_if_future(v, msg) or not self.participating(v):
            return
        if msg.sender != primary_of(v, self.cfg):
            return
        key = (v, pc.round)
        mine = self.proposals.get(key)
        if mine is not None and mine.digest != pc.digest:
            self._equivocation(mine, pc.proposal)
            return
        expected = self.repropose_expected.get(pc.round)
        if expected is not None and expected != pc.digest:
            self.detect_failure(v)
            return
        if pc.round <= self.nv_rcc or (expected is None and pc.round <= self.committed_prefix):
            return
        if key in self.prepared_keys:
            return
        self.prepared_keys.add(key)
        self.repropose_missing.discard(pc.round)
        if mine is None:
            self.proposals[key] = pc.proposal
            if pc.round > self.committed_prefix:
                self._set_timer(("expect-round", v, pc.round), 4 * self.delta())
        self._store_pc(pc)

    # ------------------------------------------------------- check-commit
    def _linear_progress(self) -> None:
        last = min(self.executed_prefix, self.committed_prefix + self.cfg.n)
        for rnd in range(self.committed_prefix + 1, last + 1):
            slot = self.slots[rnd]
            self.start_linear_check_commit(rnd, slot.pc)
        self._resolve_linear()

    def start_linear_check_commit(self, rnd: int, pc: PreparedCertificate) -> None:
        v = pc.view
        if not self.participating(v) or (v, rnd) in self.scc_sent:
            return
        digests = {r: self.slots[r].pc.digest for r in self._window_rounds(rnd)}
        wd = self.window_digest(rnd, digests)
        stmt = commit_statement(rnd, v, wd)
        msg = self._make(SupportCC, sender=self.id, round=rnd, view=v, window_digest=wd,
                         share_nf=self.signer.share(self.prepare_scheme, stmt),
                         share_f1=self.signer.share(self.recovery_scheme, stmt))
        self.scc_sent[(v, rnd)] = msg
        self._send(aggregator_of(rnd, self.cfg), msg)
        if self.cfg.retransmit:
            self._set_timer(("retx-scc", v, rnd), 4 * self.delta())

    def on_support_cc(self, msg: SupportCC) -> None:
        rnd = msg.round
        if aggregator_of(rnd, self.cfg) != self.id:
            return
        senders = self.agg_senders.setdefault(rnd, set())
        repeat = msg.sender in senders
        senders.add(msg.sender)
        done = self.agg_done.get(rnd)
        if done is not None:
            # a repeated SupportCC means the broadcast CertifyCC did not reach its sender
            if repeat and msg.sender != self.id:
                self._send(msg.sender, done)
            return
        if msg.view != self.entered_view:
            return
        key = (rnd, msg.view, msg.window_digest)
        tally = self.scc_tally.setdefault(key, {})
        tally.setdefault(msg.sender, msg)
        if len(tally) >= self.f1 and key not in self.rc_sent and self.cfg.emit_recovery_cc:
            self.rc_sent.add(key)
            try:
                tsig = self.auth.threshold_combine(self.recovery_scheme, [m.share_f1 for m in tally.values()])
            except AuthError:
                return
            rc = RecoveryCertificate(rnd, msg.view, msg.window_digest, tsig)
            self._broadcast(self._make(RecoveryCC, sender=self.id, rc=rc))
        if len(tally) >= self.nf:
            try:
                tsig = self.auth.threshold_combine(self.prepare_scheme, [m.share_nf for m in tally.values()])
            except AuthError:
                return
            cc = LinearCC(rnd, msg.view, msg.window_digest, tsig, ())
            out = self._make(CertifyCC, sender=self.id, cc=cc)
            self.agg_done[rnd] = out
            self._broadcast(out)

    def on_recovery_cc(self, msg: RecoveryCC) -> None:
        rc = msg.rc
        if msg.sender != aggregator_of(rc.round, self.cfg) or rc.round <= self.committed_prefix:
            return
        self.recovery_targets[rc.round] = rc
        self._recover(rc.round, rc.window_digest, msg.sender)

    def on_certify_cc(self, msg: CertifyCC) -> None:
        cc = msg.cc
        if msg.sender != aggregator_of(cc.round, self.cfg) or cc.round <= self.committed_prefix:
            return
        self.linear_ccs.setdefault(cc.round, cc)
        self._resolve_linear()
        if cc.round in self.linear_ccs and self.committed_prefix >= cc.round - self.cfg.n:
            self._recover(cc.round, cc.window_digest, msg.sender)

    def _local_window(self, top: int) -> dict[int, PreparedCertificate] | None:
        pcs = {}
        for r in self._window_rounds(top):
            slot = self.slots.get(r)
            if slot is None or slot.pc is None or self._request_of(slot.pc) is None:
                return None
            pcs[r] = slot.commit_pc or slot.pc
        return pcs

    def _match_window(self, top: int, wd: bytes) -> dict[int, PreparedCertificate] | None:
        """PCs for the window ending at ``top`` whose digest is ``wd``, if locally known."""
        local = self._local_window(top)
        candidates = [local] if local is not None else []
        base = {r: s.pc for r in self._window_rounds(top) if (s := self.slots.get(r)) and s.pc is not None}
        for batch in reversed(self.pc_batches):
            merged = dict(base)
            for r in self._window_rounds(top):
                if r in batch and r > self.committed_prefix:
                    merged[r] = batch[r]
            if len(merged) == len(self._window_rounds(top)):
                candidates.append(merged)
        for pcs in candidates:
            if self.window_digest(top, {r: pc.digest for r, pc in pcs.items()}) == wd:
                if all(self._request_of(pc) is not None for pc in pcs.values()):
                    return pcs
        return None

    def _recover(self, top: int, wd: bytes, source: int) -> None:
        if self._match_window(top, wd) is not None:
            return
        missing = tuple(r for r in self._window_rounds(top)
                        if r > self.committed_prefix and not self._have_pc_for_fetch(r))
        rounds = missing or tuple(r for r in self._window_rounds(top) if r > self.committed_prefix)
        if rounds:
            self._fetch(rounds, source)

    def _resolve_linear(self) -> None:
        if not self.linear_ccs:
            return
        for top in sorted(self.linear_ccs):
            cc = self.linear_ccs[top]
            if top <= self.committed_prefix:
                del self.linear_ccs[top]
                continue
            if self.committed_prefix < top - self.cfg.n:
                break
            pcs = self._match_window(top, cc.window_digest)
            if pcs is None:
                continue
            del self.linear_ccs[top]
            self.pending_commits.setdefault(top, (cc, pcs))
            if cc.view == self.view:
                self.vc_base = max(self.vc_base, cc.view)
        self._drain_pending_commits()

    def _linear_provided(self, pcs: tuple[PreparedCertificate, ...]) -> None:
        batch = {pc.round: pc for pc in pcs if self._request_of(pc) is not None}
        if not batch:
            return
        self.pc_batches.append(batch)
        del self.pc_batches[:-8]
        for rnd in sorted(batch):
            pc = batch[rnd]
            slot = self.slots.get(rnd)
            if rnd <= self.committed_prefix or (slot is not None and slot.executed):
                continue
            if self.participating(pc.view):
                self._store_pc(pc)
        for top, rc in list(self.recovery_targets.items()):
            if top <= self.committed_prefix:
                del self.recovery_targets[top]
                continue
            pcs_ = self._match_window(top, rc.window_digest)
            if pcs_ is not None:
                del self.recovery_targets[top]
                for r in sorted(pcs_):
                    slot = self.slots.get(r)
                    if r > self.committed_prefix and (slot is None or slot.pc is None):
                        if self.participating(pcs_[r].view):
                            self._store_pc(pcs_[r])
        self._try_execute()
        self._resolve_linear()

    # --------------------------------------------------------------- views
    def _linear_new_view(self, w: int) -> None:
        self.support_shares = {k: s for k, s in self.support_shares.items() if k[0] >= w}
        self.certified = {k for k in self.certified if k[0] >= w}
        self.prepare_sent = {k: m for k, m in self.prepare_sent.items() if k[0] >= w}
        self.scc_sent = {k: m for k, m in self.scc_sent.items() if k[0] >= w}
        self.scc_tally = {k: t for k, t in self.scc_tally.items() if k[1] >= w}
        self.recovery_targets = {}

    # -------------------------------------------------------------- timers
    def _linear_timer(self, tid: Hashable) -> None:
        kind = tid[0]
        if kind == "retx-scc":
            _, v, rnd = tid
            msg = self.scc_sent.get((v, rnd))
            if msg is not None and self.participating(v) and rnd > self.committed_prefix:
                self._send(aggregator_of(rnd, self.cfg), msg)
                self._set_timer(tid, 4 * self.delta())
        elif kind == "filler":
            self._filler()

    def _filler(self) -> None:
        if self.primary() != self.id or not self.participating(self.view):
            return
        if self.committed_prefix >= self.next_round - 1:
            return
        if any(d not in self.proposed for d in self.pending):
            return
        # with W <= f every open round could belong to a faulty aggregator; fillers may reach f+1 ahead
        if self.next_round > self.committed_prefix + max(self.cfg.window, self.f1):
            if self.cfg.retransmit:
                # the window is stuck: resend the prepare-phase message of every open round
                for rnd in range(self.committed_prefix + 1, self.next_round):
                    msg = self.prepare_sent.get((self.view, rnd))
                    if msg is not None:
                        self._broadcast(msg)
            self._set_timer(("filler",), 8 * self.delta())
            return
        self.filler_seq += 1
        payload = b"NOOP"
        tmp = ClientRequest(self.identity, self.filler_seq, payload, self.signer.sign(b""))
        req = ClientRequest(self.identity, self.filler_seq, payload, self.signer.sign(signable(tmp)))
        self.known[request_digest(req)] = req
        self._note("filler", round=self.next_round)
        self._propose(req, self.next_round)
        self.next_round += 1

    # ---------------------------------------------------------- dispatch
    def _on_support(self, msg: Support) -> None:
        self.on_support(msg)

    def _on_certify(self, msg: Certify) -> None:
        self.on_certify(msg)

    def _on_support_cc(self, msg: SupportCC) -> None:
        self.on_support_cc(msg)

    def _on_recovery_cc(self, msg: RecoveryCC) -> None:
        self.on_recovery_cc(msg)

    def _on_certify_cc(self, msg: CertifyCC) -> None:
        self.on_certify_cc(msg)

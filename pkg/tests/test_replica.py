from __future__ import annotations

import pytest

from poe.core.evidence import Signature
from poe.core.messages import DummyCC, NewView, PreparedCertificate, QuorumCC, CheckCommit, ViewState, Vote
from poe.replica import IllFormedNewView, derive_ledger

from .conftest import make_deployment, sent

NOSIG = Signature("", b"")


def _pc(dep, req, view, rnd):
    prop = dep.propose(req, view, rnd).proposal
    return PreparedCertificate.from_votes(prop, [Vote(r, NOSIG) for r in range(3)], 3)


def _cc(dep, req, rnd):
    prop = dep.propose(req, 0, rnd).proposal
    return QuorumCC.from_check_commits(prop, [CheckCommit(r, prop, None, NOSIG) for r in range(3)], 3)


def _vs(sender, view, cc, executed):
    return ViewState(sender, view, cc, tuple(executed), (), NOSIG)


class TestDeriveLedger:
    def test_latest_view_wins_after_commit_point(self, deployment):
        a, b, c = (deployment.request(f"SET {k} 1".encode(), seq=i) for i, k in enumerate("abc", 1))
        states = (
            _vs(0, 2, _cc(deployment, a, 1), [_pc(deployment, b, 0, 2)]),
            _vs(1, 2, DummyCC(), [_pc(deployment, a, 0, 1), _pc(deployment, c, 1, 2)]),
            _vs(2, 2, DummyCC(), []),
        )
        ledger = derive_ledger(NewView(3, 2, states, NOSIG))
        assert (ledger.r_cc, ledger.r) == (1, 2)
        assert ledger.entries[2] == _pc(deployment, c, 1, 2).digest

    def test_conflicting_commit_certificates_rejected(self, deployment):
        a, b = deployment.request(b"SET a 1", 1), deployment.request(b"SET b 1", 2)
        states = (_vs(0, 2, _cc(deployment, a, 1), []), _vs(1, 2, _cc(deployment, b, 1), []),
                  _vs(2, 2, DummyCC(), []))
        with pytest.raises(IllFormedNewView):
            derive_ledger(NewView(3, 2, states, NOSIG))

    def test_same_view_conflict_rejected(self, deployment):
        a, b = deployment.request(b"SET a 1", 1), deployment.request(b"SET b 1", 2)
        states = (_vs(0, 2, DummyCC(), [_pc(deployment, a, 1, 1)]), _vs(1, 2, DummyCC(), [_pc(deployment, b, 1, 1)]),
                  _vs(2, 2, DummyCC(), []))
        with pytest.raises(IllFormedNewView):
            derive_ledger(NewView(3, 2, states, NOSIG))

    def test_committed_rounds_without_request_are_left_open(self, deployment):
        c = deployment.request(b"SET c 1", 3)
        states = (_vs(0, 2, _cc(deployment, c, 3), []), _vs(1, 2, DummyCC(), []), _vs(2, 2, DummyCC(), []))
        ledger = derive_ledger(NewView(3, 2, states, NOSIG))
        assert ledger.digests() == [None, None, _pc(deployment, c, 0, 3).digest]

    def test_empty_states_give_empty_ledger(self):
        ledger = derive_ledger(NewView(1, 0, tuple(_vs(r, 0, DummyCC(), []) for r in range(3)), NOSIG))
        assert (ledger.r_cc, ledger.r, ledger.entries) == (0, 0, {})


class TestNormalCase:
    def test_primary_proposes_on_request(self, deployment):
        req = deployment.request()
        out = deployment.replicas[0].on_message(deployment.client_message(req), 0.0)
        [prop] = sent(out, "Propose")
        assert (prop.proposal.view, prop.proposal.round, prop.proposal.request) == (0, 1, req)

    def test_backup_forwards_client_request(self, deployment):
        out = deployment.replicas[2].on_message(deployment.client_message(deployment.request()), 0.0)
        assert not sent(out, "Propose")
        assert any(getattr(a, "dest", None) == 0 for a in out)

    def test_backup_prepares_on_propose(self, deployment):
        out = deployment.replicas[1].on_message(deployment.propose(deployment.request()), 0.0)
        [prep] = sent(out, "Prepare")
        assert prep.sender == 1

    def test_propose_from_non_primary_ignored(self, deployment):
        msg = deployment.propose(deployment.request(), view=1)
        assert not sent(deployment.replicas[2].on_message(msg, 0.0), "Prepare")

    def test_full_round_executes_everywhere(self, deployment):
        req = deployment.request()
        out = deployment.replicas[0].on_message(deployment.client_message(req), 0.0)
        delivered = deployment.pump(0, out)
        assert all(r.executed_prefix == 1 and r.committed_prefix == 1 for r in deployment.replicas)
        assert {r.app.data["k"] for r in deployment.replicas} == {"v"}
        assert deployment.client.outcomes[req.request_id].proof == "proof-of-execution"
        assert sum(type(m).__name__ == "Prepare" for _, _, m in delivered) == 12

    def test_missing_prepares_block_execution(self, deployment):
        out = deployment.replicas[0].on_message(deployment.client_message(deployment.request()), 0.0)
        deployment.pump(0, out, drop=lambda s, d, m: d == 3 and (s in (1, 2) or type(m).__name__ == "CheckCommit"))
        assert deployment.replicas[3].executed_prefix == 0

    def test_certificate_in_check_commit_is_adopted(self, deployment):
        out = deployment.replicas[0].on_message(deployment.client_message(deployment.request()), 0.0)
        deployment.pump(0, out, drop=lambda s, d, m: d == 3 and s in (1, 2))
        assert deployment.replicas[3].executed_prefix == 1

    def test_equivocation_detected(self, deployment):
        a = deployment.propose(deployment.request(b"SET a 1", 1))
        b = deployment.propose(deployment.request(b"SET b 1", 2))
        r1 = deployment.replicas[1]
        r1.on_message(a, 0.0)
        out = r1.on_message(b, 0.0)
        [failure] = sent(out, "Failure")
        assert failure.view == 0 and len(failure.proof) == 2


class TestViewChange:
    def test_failure_amplified_at_f_plus_one(self):
        dep = make_deployment()
        r3 = dep.replicas[3]
        f1 = [r.force_timeout(0.0) for r in dep.replicas[1:3]]
        out = r3.on_message(sent(f1[0], "Failure")[0], 0.0)
        assert not sent(out, "Failure")
        out = r3.on_message(sent(f1[1], "Failure")[0], 0.0)
        assert sent(out, "Failure")[0].view == 0

    def test_silent_primary_replaced(self):
        dep = make_deployment()
        timeouts = [(r.id, r.force_timeout(0.0)) for r in dep.replicas[1:]]
        for rid, out in timeouts:
            dep.pump(rid, out, drop=lambda s, d, m: d == 0 or s == 0)
        assert all(r.view == 1 and r.entered_view == 1 for r in dep.replicas[1:])
        req = dep.request()
        out = dep.replicas[1].on_message(dep.client_message(req), 0.0)
        dep.pump(1, out, drop=lambda s, d, m: d == 0 or s == 0)
        assert all(r.executed_prefix == 1 for r in dep.replicas[1:])
        assert dep.client.outcomes[req.request_id].view == 1

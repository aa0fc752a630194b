from __future__ import annotations

from poe.simulator import count_messages, run

from .conftest import make_deployment, sent, simple_scenario


def _linear():
    return make_deployment(linear_mode=True, linear_filler=False)


def test_backup_sends_support_to_primary_only():
    dep = _linear()
    out = dep.replicas[2].on_message(dep.propose(dep.request()), 0.0)
    assert not sent(out, "Prepare")
    [support] = [a for a in out if type(getattr(a, "msg", None)).__name__ == "Support"]
    assert support.dest == 0


def test_certify_after_quorum_of_supports():
    dep = _linear()
    req = dep.request()
    out = dep.replicas[0].on_message(dep.client_message(req), 0.0)
    delivered = dep.pump(0, out)
    certs = [m for s, _, m in delivered if type(m).__name__ == "Certify"]
    assert len(certs) == 3 and certs[0].pc.tsig is not None
    assert all(r.executed_prefix == 1 and r.committed_prefix == 1 for r in dep.replicas)
    assert dep.client.outcomes[req.request_id].proof == "proof-of-execution"


def test_aggregator_collects_support_cc():
    dep = _linear()
    out = dep.replicas[0].on_message(dep.client_message(dep.request()), 0.0)
    delivered = dep.pump(0, out)
    # round 1 is aggregated by replica 1
    assert {d for _, d, m in delivered if type(m).__name__ == "SupportCC"} == {1}
    assert {s for s, _, m in delivered if type(m).__name__ == "CertifyCC"} == {1}


def test_no_quadratic_phase():
    result = run(simple_scenario(requests=4, linear=True))
    counts = count_messages(result.trace, per=4)
    assert counts.get("Prepare", 0) == 0 and counts.get("CheckCommit", 0) == 0
    assert result.report.ok


def test_silent_aggregator_recovered_without_view_change():
    dep = _linear()
    out = dep.replicas[0].on_message(dep.client_message(dep.request()), 0.0)
    dep.pump(0, out, drop=lambda s, d, m: s == 1 and type(m).__name__ in ("CertifyCC", "RecoveryCC"))
    assert all(r.executed_prefix == 1 for r in dep.replicas)
    assert all(r.view == 0 for r in dep.replicas)

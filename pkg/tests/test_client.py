from __future__ import annotations

from poe.actions import Broadcast, Send
from poe.core.messages import Inform, InformCC, request_digest


def _inform(dep, rid, req, result=b"OK", view=0, rnd=1):
    return dep.replicas[rid]._make(Inform, sender=rid, request_digest=request_digest(req), view=view,
                                   round=rnd, result=result)


def _inform_cc(dep, rid, req, result=b"OK", rnd=1):
    return dep.replicas[rid]._make(InformCC, sender=rid, request_digest=request_digest(req), round=rnd,
                                   result=result)


def test_submit_sends_to_believed_primary(deployment):
    req = deployment.client.make_request(b"GET k")
    out = deployment.client.submit(req)
    assert isinstance(out[0], Send) and out[0].dest == 0
    assert deployment.client.submit(req)  # resubmission before an outcome is allowed


def test_resend_broadcasts(deployment):
    req = deployment.request()
    out = deployment.client.on_timer(("resend", request_digest(req)), 50.0)
    assert isinstance(out[0], Broadcast)


def test_quorum_of_identical_informs_proves_execution(deployment):
    req, client = deployment.request(), deployment.client
    assert not client.on_message(_inform(deployment, 0, req), 1.0)
    assert not client.on_message(_inform(deployment, 1, req), 1.0)
    out = client.on_message(_inform(deployment, 2, req), 2.0)
    assert out[-1].data["proof"] == "proof-of-execution"
    assert client.outcomes[req.request_id].time == 2.0


def test_mixed_results_do_not_combine(deployment):
    req, client = deployment.request(), deployment.client
    for rid, result in enumerate([b"OK", b"OK", b"ERR malformed", b"NIL"]):
        client.on_message(_inform(deployment, rid, req, result), 1.0)
    assert req.request_id not in client.outcomes


def test_informs_from_different_views_do_not_combine(deployment):
    req, client = deployment.request(), deployment.client
    for rid, view in [(0, 0), (1, 0), (2, 1), (3, 1)]:
        client.on_message(_inform(deployment, rid, req, view=view), 1.0)
    assert req.request_id not in client.outcomes
    assert client.believed_view == 1


def test_duplicate_sender_counted_once(deployment):
    req, client = deployment.request(), deployment.client
    for _ in range(3):
        client.on_message(_inform(deployment, 1, req), 1.0)
    client.on_message(_inform(deployment, 2, req), 1.0)
    assert req.request_id not in client.outcomes


def test_forged_inform_rejected(deployment):
    req, client = deployment.request(), deployment.client
    forged = deployment.replicas[0]._make(Inform, sender=1, request_digest=request_digest(req), view=0,
                                          round=1, result=b"OK")
    for rid in (2, 3):
        client.on_message(_inform(deployment, rid, req), 1.0)
    client.on_message(forged, 1.0)
    assert req.request_id not in client.outcomes


def test_f_plus_one_inform_cc_proves_commit(deployment):
    req, client = deployment.request(), deployment.client
    assert not client.on_message(_inform_cc(deployment, 1, req), 1.0)
    out = client.on_message(_inform_cc(deployment, 3, req), 1.0)
    assert out[-1].data["proof"] == "proof-of-commit"


def test_unknown_request_ignored(deployment):
    other = deployment.client.make_request(b"GET z", 9)
    for rid in range(4):
        deployment.client.on_message(_inform(deployment, rid, other), 1.0)
    assert not deployment.client.outcomes

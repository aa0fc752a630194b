from __future__ import annotations

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from poe.auth import InsufficientShares, SimulatedAuth, prepare_scheme
from poe.core.codec import decode, encode
from poe.core.config import SystemConfig, aggregator_of, quorums
from poe.execution import AppState
from poe.simulator import dump, parse, run
from poe.simulator.soak import generate

from .conftest import make_deployment

FAST = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])

configs = st.integers(min_value=1, max_value=20).flatmap(
    lambda f: st.integers(min_value=3 * f + 1, max_value=3 * f + 8).map(lambda n: SystemConfig(n=n, f=f)))


@given(configs)
def test_quorums_intersect_in_an_honest_replica(cfg):
    nf, f1 = quorums(cfg)
    # two nf quorums share at least f+1 replicas, so at least one honest one
    assert 2 * nf - cfg.n >= f1
    assert nf >= 2 * cfg.f + 1 and f1 == cfg.f + 1 <= nf


@given(configs, st.integers(min_value=1, max_value=500))
def test_aggregators_rotate_over_all_replicas(cfg, start):
    assert {aggregator_of(r, cfg) for r in range(start, start + cfg.n)} == set(range(cfg.n))


@FAST
@given(st.sets(st.integers(min_value=0, max_value=6), min_size=0, max_size=7))
def test_threshold_combine_needs_distinct_quorum(signers):
    cfg = SystemConfig(n=7, f=2)
    auth = SimulatedAuth(0, cfg)
    scheme = prepare_scheme(cfg)
    shares = [auth.threshold_share(scheme, f"r{i}", b"stmt") for i in sorted(signers)]
    try:
        sig = auth.threshold_combine(scheme, shares)
    except InsufficientShares:
        assert len(signers) < 5
    else:
        assert len(signers) >= 5 and auth.threshold_verify(scheme, sig, b"stmt")


commands = st.one_of(
    st.builds(lambda k, v: f"SET {k} {v}", st.sampled_from("abc"), st.integers(0, 9)),
    st.builds(lambda k: f"DEL {k}", st.sampled_from("abc")),
    st.builds(lambda k: f"GET {k}", st.sampled_from("abc")),
    st.just("NOOP"),
    st.just("garbage"),
)


@given(st.lists(commands, max_size=20), st.data())
def test_rollback_equals_replay(cmds, data):
    cut = data.draw(st.integers(min_value=0, max_value=len(cmds)))
    app, replay = AppState(), AppState()
    for i, cmd in enumerate(cmds, 1):
        app.apply(i, cmd.encode())
    for i, cmd in enumerate(cmds[:cut], 1):
        replay.apply(i, cmd.encode())
    app.rollback_to(cut)
    assert app.data == replay.data and app.state_digest() == replay.state_digest()


@given(st.binary(max_size=40), st.integers(min_value=1, max_value=2**31))
def test_codec_round_trip(payload, seq):
    dep = make_deployment()
    req = dep.client.make_request(payload, seq)
    msg = dep.propose(req)
    assert decode(encode(msg)) == msg


@FAST
@given(st.integers(min_value=0, max_value=10_000), st.sampled_from(["standard", "digest", "linear"]))
def test_runs_are_deterministic_and_round_trip(seed, mode):
    scenario = generate(seed, mode)
    assert parse(dump(scenario)) == scenario
    first = run(scenario, measure_bytes=False)
    assert first.trace.to_jsonl() == run(scenario, measure_bytes=False).trace.to_jsonl()
    assert first.report.ok

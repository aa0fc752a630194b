"""Frozen reference values computed by hand from the protocol's formulas.

Each oracle is written down as a literal before any code computes it, so a
regression in the implementation cannot silently move the expectation.
"""
from __future__ import annotations

import math

import pytest

from poe import costmodel
from poe.simulator import count_messages, execution_latency, run

from .conftest import simple_scenario

# [DERIVED] (n-1) + 2n(n-1): 3 + 12 + 12 at n=4, 6 + 42 + 42 at n=7
STANDARD_PER_DECISION = {4: {"Propose": 3, "Prepare": 12, "CheckCommit": 12, "total": 27},
                         7: {"Propose": 6, "Prepare": 42, "CheckCommit": 42, "total": 90}}
# [DERIVED] 5(n-1) with RecoveryCC suppressed: Propose, Support, Certify, SupportCC, CertifyCC
LINEAR_PER_DECISION = {4: 15, 7: 30}
# [DERIVED] 2^3 * {7, 3, 5, 1}; first j with 2^j * estimate >= 30
BACKOFF_AFTER_3 = [56, 24, 40, 8]
BACKOFF_FIRST_J = [3, 4, 3, 5]
# [DERIVED] 30 * (10240 + 768) and 30 * (10240 + 512 + 768/31)
STANDARD_BYTES = 330_240
LINEAR_BYTES = 30 * (10_240 + 512) + 30 * 768 / 31
# [DERIVED] 1 / (3 * 0.015) and 10^9 / 330240
SEQUENTIAL_TPS = 22.2222
OUT_OF_ORDER_TPS = 3028.1008


@pytest.mark.parametrize("n", [4, 7])
def test_standard_message_counts(n):
    f = (n - 1) // 3
    result = run(simple_scenario(n=n, f=f, requests=6))
    counts = count_messages(result.trace, per=6)
    assert {k: counts[k] for k in STANDARD_PER_DECISION[n]} == STANDARD_PER_DECISION[n]
    assert costmodel.exact_messages(n, "PoE") == STANDARD_PER_DECISION[n]["total"]


def test_digest_mode_counts_match_standard():
    result = run(simple_scenario(requests=6, digest_mode=True))
    assert count_messages(result.trace, per=6)["total"] == STANDARD_PER_DECISION[4]["total"]


@pytest.mark.parametrize("n", [4, 7])
def test_linear_message_counts(n):
    f = (n - 1) // 3
    result = run(simple_scenario(n=n, f=f, requests=6, linear=True, emit_recovery_cc=False))
    counts = count_messages(result.trace, per=6)
    assert counts["total"] == LINEAR_PER_DECISION[n]
    assert all(counts[k] == n - 1 for k in ("Propose", "Support", "Certify", "SupportCC", "CertifyCC"))
    assert costmodel.exact_messages(n, "Linear-PoE") == LINEAR_PER_DECISION[n]


def test_linear_recovery_certificate_adds_one_broadcast():
    result = run(simple_scenario(requests=6, linear=True))
    counts = count_messages(result.trace, per=6)
    assert counts["RecoveryCC"] == 3
    assert counts["total"] == costmodel.exact_messages(4, "Linear-PoE", recovery_cc=True) == 18


def test_backoff_oracle():
    table = costmodel.backoff_table([7, 3, 5, 1], 30, backoffs=3)
    assert [row.after for row in table.rows] == BACKOFF_AFTER_3
    assert [row.first_sufficient for row in table.rows] == BACKOFF_FIRST_J


def test_bandwidth_oracle():
    params = costmodel.CostParams(n=31, request_size=10 * 1024, message_size=256)
    assert costmodel.primary_bandwidth(params) == STANDARD_BYTES
    assert costmodel.primary_bandwidth(params, linear=True) == pytest.approx(LINEAR_BYTES)


def test_throughput_oracle():
    params = costmodel.CostParams(n=31, request_size=10 * 1024, message_size=256, bandwidth=1e9, delay=0.015)
    assert costmodel.throughput(params) == pytest.approx(SEQUENTIAL_TPS, abs=1e-4)
    assert costmodel.throughput(params, out_of_order=True) == pytest.approx(OUT_OF_ORDER_TPS, abs=1e-4)


@pytest.mark.parametrize("linear, rounds", [(False, 2), (True, 3)])
def test_execution_latency_oracle(linear, rounds):
    result = run(simple_scenario(requests=3, linear=linear))
    for entry in execution_latency(result.trace).values():
        # in linear mode the primary executes on the Supports, one delay before the backups
        assert max(entry["executed"].values()) == entry["delta_units"] == rounds
        assert min(entry["executed"].values()) == 2


def test_client_proof_three_delays_after_propose():
    result = run(simple_scenario(requests=1, start=10))
    proposed = next(e[0] for e in result.trace.of("proposed"))
    outcome = next(e for e in result.trace.of("outcome"))
    assert proposed == 11.0
    assert outcome[0] - proposed == 3.0
    assert outcome[3]["proof"] == "proof-of-execution"


def test_oracles_are_self_consistent():
    assert STANDARD_BYTES / 1024 == 322.5
    assert math.isclose(LINEAR_BYTES / 1024, 315.7, abs_tol=0.05)

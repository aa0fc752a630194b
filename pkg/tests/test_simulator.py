from __future__ import annotations

import pytest

from poe.simulator import (
    ScenarioError,
    Trace,
    check_liveness,
    check_non_divergence,
    check_poe_preservation,
    check_view_sync,
    dump,
    parse,
    run,
)
from poe.simulator.soak import generate

from .conftest import simple_scenario

HEADER = {"n": 4, "f": 1, "faulty": [3], "delta": 1.0, "unreliable": [], "heal_time": 0.0}


def _trace(*events, header=None):
    return Trace(dict(HEADER, **(header or {})), list(events))


class TestDeterminism:
    def test_same_seed_same_trace(self):
        scenario = generate(7, "standard")
        assert run(scenario).trace.to_jsonl() == run(scenario).trace.to_jsonl()

    def test_seed_changes_trace(self):
        a = run(generate(7, "standard")).trace.to_jsonl()
        b = run(generate(8, "standard")).trace.to_jsonl()
        assert a != b


class TestScenarioFiles:
    def test_error_reports_line(self):
        text = "system:\n  n: 4\n  f: 1\nnetwork:\n  delay: -3\nduration: 10\n"
        with pytest.raises(ScenarioError) as info:
            parse(text)
        assert info.value.line == 5

    def test_unknown_key_reported(self):
        with pytest.raises(ScenarioError) as info:
            parse("system:\n  n: 4\n  f: 1\n  colour: red\nduration: 10\n")
        assert info.value.line == 4

    def test_invalid_quorum_reported(self):
        with pytest.raises(ScenarioError):
            parse("system:\n  n: 3\n  f: 1\nduration: 10\n")

    def test_dump_round_trip(self):
        scenario = generate(3, "linear")
        assert parse(dump(scenario)) == scenario

    def test_overrides(self):
        scenario = simple_scenario().with_overrides(["system.window=7", "seed=11"])
        assert scenario.config.window == 7 and scenario.seed == 11


class TestCheckers:
    def test_divergent_commits_flagged(self):
        trace = _trace((1.0, "r0", "commit", {"round": 1, "digest": "aa"}),
                       (2.0, "r1", "commit", {"round": 1, "digest": "bb"}),
                       (3.0, "r3", "commit", {"round": 1, "digest": "cc"}))
        result = check_non_divergence(trace)
        assert not result.ok and [v.event_index for v in result.violations] == [1]

    def test_faulty_replica_ignored(self):
        trace = _trace((1.0, "r0", "commit", {"round": 1, "digest": "aa"}),
                       (2.0, "r3", "commit", {"round": 1, "digest": "cc"}))
        assert check_non_divergence(trace).ok

    def test_overturned_proof_of_execution_flagged(self):
        informs = [(1.0, f"r{r}", "inform", {"digest": "aa", "view": 0, "round": 1, "result": "4f4b"}) for r in range(3)]
        later = (9.0, "r1", "executed", {"round": 1, "view": 1, "digest": "bb"})
        result = check_poe_preservation(_trace(*informs, later))
        assert not result.ok and result.violations[0].event_index == 3

    def test_earlier_view_execution_not_flagged(self):
        informs = [(1.0, f"r{r}", "inform", {"digest": "aa", "view": 1, "round": 1, "result": "4f4b"}) for r in range(3)]
        earlier = (0.5, "r1", "executed", {"round": 1, "view": 0, "digest": "bb"})
        assert check_poe_preservation(_trace(earlier, *informs)).ok

    def test_view_sync_flags_straggler(self):
        trace = _trace((10.0, "r0", "proposal_stage", {"view": 0}),
                       (11.0, "r1", "proposal_stage", {"view": 0}),
                       (15.0, "r2", "proposal_stage", {"view": 0}),
                       *[(13.0, f"r{r}", "view_entered", {"view": 1}) for r in range(3)])
        result = check_view_sync(trace)
        assert not result.ok and result.violations[0].event_index == 2

    def test_view_sync_skipped_under_partition(self):
        trace = _trace((10.0, "r0", "proposal_stage", {"view": 0}),
                       header={"unreliable": [[0.0, 20.0]]})
        result = check_view_sync(trace)
        assert result.ok and result.skipped

    def test_liveness_flags_missing_request(self):
        final = lambda ledger: {"committed": ledger, "executed": []}  # noqa: E731
        trace = _trace((0.0, "c0", "submit", {"digest": "aa", "request": "c0#1"}),
                       (50.0, "r0", "final_state", final(["aa"])),
                       (50.0, "r1", "final_state", final([])),
                       (50.0, "r2", "final_state", final(["aa"])))
        details = [v.detail for v in check_liveness(trace).violations]
        assert any("differ" in d for d in details) and any("r1 lacks 1" in d for d in details)


class TestEngine:
    def test_messages_respect_network_delay(self):
        result = run(simple_scenario())
        assert {round(t, 6) % 1 for t, *_ in result.trace.messages} == {0.0}
        assert result.report.ok

    def test_metrics_report_latency(self):
        metrics = run(simple_scenario(requests=2)).metrics
        assert set(metrics.latency_by_request) == {"c0#1", "c0#2"}
        # one hop to the primary, then three delays from Propose to the proof
        assert all(v["delta_units"] == 4 for v in metrics.latency_by_request.values())

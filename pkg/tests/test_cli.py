from __future__ import annotations

import json

import pytest

from poe.cli import EXIT_CHECK, EXIT_OK, EXIT_PARSE, bundled_names, main


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    assert "happy-path-n4" in capsys.readouterr().out.split()


def test_run_bundled_scenario_writes_report(tmp_path, capsys):
    report, trace = tmp_path / "r.json", tmp_path / "t.jsonl"
    assert main(["run", "happy-path-n4", "--report", str(report), "--trace", str(trace)]) == EXIT_OK
    data = json.loads(report.read_text())
    assert data["runs"][0]["ok"] and trace.read_text().startswith('{"')
    assert "PASS" in capsys.readouterr().out


def test_variants_compared(capsys):
    assert main(["run", "fig4-indistinguishable"]) == EXIT_OK
    assert "identical" in capsys.readouterr().out


def test_failing_check_exit_code(tmp_path):
    path = tmp_path / "bad.yaml"
    # the run ends before the request submitted ahead of the heal point can commit
    path.write_text("system: {n: 4, f: 1}\nnetwork:\n  delay: 1\n  drops: [{start: 0, end: 2, prob: 0.0}]\n"
                    "workload:\n  requests:\n    - {client: c0, payload: SET a 1, time: 1}\n"
                    "checks: [liveness]\nduration: 3\n")
    assert main(["run", str(path)]) == EXIT_CHECK


@pytest.mark.parametrize("argv", [["run", "no-such-scenario"], ["frobnicate"],
                                  ["cost", "--c", "ten"], ["batch", "happy-path-n4", "--seeds", "5..2"]])
def test_parse_errors(argv, capsys):
    assert main(argv) == EXIT_PARSE


def test_bad_scenario_line_number(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("system:\n  n: 4\n  f: 1\nduration: soon\n")
    assert main(["run", str(path)]) == EXIT_PARSE
    assert "line 4" in capsys.readouterr().err


def test_override(capsys):
    assert main(["run", "happy-path-n4", "--seed", "5", "--override", "system.window=8"]) == EXIT_OK
    assert "(seed 5)" in capsys.readouterr().out


def test_batch(capsys):
    assert main(["batch", "soak:standard", "--seeds", "0..3"]) == EXIT_OK
    assert "3/3 seeds passed" in capsys.readouterr().out


def test_cost_worked_example(capsys):
    assert main(["cost", "--n", "31", "--c", "10KiB", "--m", "256", "--delta", "15ms", "--throughput"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "330,240 B (322.5 KiB)" in out and "reduction: 2.1%" in out and "below 22.3" in out
    assert "out-of-order: 3028" in out


def test_cost_decimal_kilobytes_differ(capsys):
    main(["cost", "--n", "31", "--c", "10kB", "--throughput"])
    assert "out-of-order: 3028" not in capsys.readouterr().out


def test_cost_json(capsys):
    assert main(["cost", "--json"]) == EXIT_OK
    assert len(json.loads(capsys.readouterr().out)["rows"]) == 7


def test_bundled_scenarios_pass():
    for name in bundled_names():
        if name != "randomized-faults":
            assert main(["run", name]) == EXIT_OK, name

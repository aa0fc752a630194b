"""Seeded discrete-event simulator with Byzantine fault injection and checkers."""
from .checks import (
    CheckReport,
    CheckResult,
    check_liveness,
    check_non_divergence,
    check_poe_preservation,
    check_view_sync,
    run_checks,
)
from .engine import RunResult, Simulation, run
from .scenario import Scenario, ScenarioError, dump, from_dict, load, parse
from .trace import Metrics, Trace, count_messages, execution_latency

__all__ = [
    "CheckReport", "CheckResult", "Metrics", "RunResult", "Scenario", "ScenarioError", "Simulation", "Trace",
    "check_liveness", "check_non_divergence", "check_poe_preservation", "check_view_sync", "count_messages",
    "execution_latency",
    "dump", "from_dict", "load", "parse", "run", "run_checks",
]

"""Global safety and liveness checkers over completed traces."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from .trace import Trace


@dataclass(frozen=True)
class Violation:
    check: str
    event_index: int | None
    detail: str


@dataclass
class CheckResult:
    name: str
    ok: bool
    violations: list[Violation] = field(default_factory=list)
    skipped: str | None = None

    def as_dict(self) -> dict:
        return {"ok": self.ok, "skipped": self.skipped,
                "violations": [{"event_index": v.event_index, "detail": v.detail} for v in self.violations]}


@dataclass
class CheckReport:
    results: dict[str, CheckResult]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results.values())

    def as_dict(self) -> dict:
        return {name: r.as_dict() for name, r in self.results.items()}


def _honest(trace: Trace) -> set[str]:
    faulty = set(trace.header["faulty"])
    return {f"r{r}" for r in range(trace.header["n"]) if r not in faulty}


def check_non_divergence(trace: Trace) -> CheckResult:
    """Every commit certificate held by a non-faulty replica for a round names one request."""
    honest = _honest(trace)
    decided: dict[int, tuple[str, str]] = {}
    violations = []
    for idx, (t, actor, event, data) in enumerate(trace.events):
        if event != "commit" or actor not in honest:
            continue
        rnd, digest = data["round"], data["digest"]
        first = decided.setdefault(rnd, (digest, actor))
        if first[0] != digest:
            violations.append(Violation("non_divergence", idx,
                                        f"round {rnd}: {actor} committed {digest[:12]} but {first[1]} committed {first[0][:12]}"))
    finals = trace.final_states()
    for rid, state in finals.items():
        if f"r{rid}" not in honest:
            continue
        for rnd, digest in enumerate(state["committed"], start=1):
            first = decided.get(rnd)
            if first is not None and first[0] != digest:
                violations.append(Violation("non_divergence", None,
                                            f"final ledger of r{rid} holds {digest[:12]} at committed round {rnd}"))
    return CheckResult("non_divergence", not violations, violations)


def check_poe_preservation(trace: Trace) -> CheckResult:
    """A request with nf identical Informs stays at its round in every later view."""
    honest = _honest(trace)
    nf = trace.header["n"] - trace.header["f"]
    tallies: dict[tuple, set[str]] = {}
    proven: dict[tuple, int] = {}
    for idx, (t, actor, event, data) in enumerate(trace.events):
        if event != "inform":
            continue
        key = (data["digest"], data["view"], data["round"], data["result"])
        senders = tallies.setdefault(key, set())
        senders.add(actor)
        if len(senders) >= nf and key not in proven:
            proven[key] = idx
    violations = []
    if not proven:
        return CheckResult("poe_preservation", True)
    by_round: dict[int, list[tuple[str, int, int]]] = {}
    for (digest, view, rnd, _), idx in proven.items():
        by_round.setdefault(rnd, []).append((digest, view, idx))
    for rnd, items in by_round.items():
        if len({d for d, _, _ in items}) > 1:
            violations.append(Violation("poe_preservation", max(i for _, _, i in items),
                                        f"round {rnd} has proofs-of-execution for different requests"))
    for idx, (t, actor, event, data) in enumerate(trace.events):
        if event != "executed" or actor not in honest:
            continue
        for digest, view, pidx in by_round.get(data["round"], ()):
            if data["view"] >= view and data["digest"] != digest:
                violations.append(Violation("poe_preservation", idx,
                                            f"{actor} executed {data['digest'][:12]} at round {data['round']} in view "
                                            f"{data['view']} despite a proof-of-execution in view {view}"))
    for rid, state in trace.final_states().items():
        if f"r{rid}" not in honest:
            continue
        executed = {r: d for r, d, _ in state["executed"]}
        for rnd, items in by_round.items():
            for digest, view, pidx in items:
                have = executed.get(rnd)
                if have is not None and have != digest:
                    violations.append(Violation("poe_preservation", pidx,
                                                f"final ledger of r{rid} holds {have[:12]} at round {rnd}, "
                                                f"proof-of-execution names {digest[:12]}"))
    return CheckResult("poe_preservation", not violations, violations)


def _reliable_during(trace: Trace, start: float, end: float) -> bool:
    return all(e <= start or s >= end for s, e in trace.header["unreliable"])


def check_view_sync(trace: Trace) -> CheckResult:
    """Proposal-stage entries lie within 2 delta of the first; NewView arrives by 4 delta."""
    header = trace.header
    delta = header["delta"]
    honest = _honest(trace)
    faulty = set(header["faulty"])
    n = header["n"]
    stages: dict[int, list[tuple[float, str, int]]] = {}
    entered: dict[int, dict[str, float]] = {}
    for idx, (t, actor, event, data) in enumerate(trace.events):
        if actor not in honest:
            continue
        if event == "proposal_stage":
            stages.setdefault(data["view"], []).append((t, actor, idx))
        elif event == "view_entered":
            entered.setdefault(data["view"], {}).setdefault(actor, t)
    violations = []
    checked = 0
    for view, items in sorted(stages.items()):
        first = min(t for t, _, _ in items)
        if not _reliable_during(trace, first - 2 * delta, first + 4 * delta):
            continue
        checked += 1
        seen = {a for _, a, _ in items}
        for t, actor, idx in items:
            if t > first + 2 * delta + 1e-9:
                violations.append(Violation("view_sync", idx,
                                            f"{actor} entered the proposal stage of view {view} at {t}, "
                                            f"more than 2 delta after {first}"))
        missing = honest - seen - set(entered.get(view + 1, {}))
        for actor in sorted(missing):
            violations.append(Violation("view_sync", None,
                                        f"{actor} never entered the proposal stage of view {view}"))
        if (view + 1) % n not in faulty:
            for actor in sorted(honest):
                when = entered.get(view + 1, {}).get(actor)
                if when is None or when > first + 4 * delta + 1e-9:
                    violations.append(Violation("view_sync", None,
                                                f"{actor} entered view {view + 1} at {when}, bound {first + 4 * delta}"))
    skipped = None if checked or not stages else "no view-change inside a reliable window"
    return CheckResult("view_sync", not violations, violations, skipped)


def check_liveness(trace: Trace) -> CheckResult:
    """After the last unreliable window, non-faulty ledgers agree and hold every pre-heal request."""
    header = trace.header
    honest = _honest(trace)
    heal = header["heal_time"]
    finals = {f"r{r}": s for r, s in trace.final_states().items() if f"r{r}" in honest}
    violations = []
    ledgers = {a: tuple(s["committed"]) for a, s in finals.items()}
    if len(set(ledgers.values())) > 1:
        lengths = {a: len(l) for a, l in sorted(ledgers.items())}
        violations.append(Violation("liveness", None, f"committed ledgers differ at run end: lengths {lengths}"))
    wanted = {e[3]["digest"]: e[3]["request"] for e in trace.of("submit") if e[0] <= heal}
    for actor, ledger in sorted(ledgers.items()):
        have = set(ledger)
        missing = [rid for d, rid in wanted.items() if d not in have]
        if missing:
            violations.append(Violation("liveness", None, f"{actor} lacks {len(missing)} requests, e.g. {missing[0]}"))
    return CheckResult("liveness", not violations, violations)


CHECKS: dict[str, Callable[[Trace], CheckResult]] = {
    "non_divergence": check_non_divergence,
    "poe_preservation": check_poe_preservation,
    "view_sync": check_view_sync,
    "liveness": check_liveness,
}


def run_checks(trace: Trace, names: Any) -> CheckReport:
    return CheckReport({name: CHECKS[name](trace) for name in names})

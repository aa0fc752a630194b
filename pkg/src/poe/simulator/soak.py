"""Randomized fault scenarios for seeded soak runs.

Every generated scenario keeps at most f faulty replicas and confines drops and
partitions to an unreliable prefix that ends at ``heal``; the remaining time
is reliable so the liveness check applies.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable

from .engine import run
from .scenario import Scenario, from_dict
from .trace import Trace

MODES = ("standard", "digest", "linear")
SOAK_CHECKS = ["non_divergence", "poe_preservation", "liveness"]


def _behavior(rng: random.Random, rid: int, n: int, heal: float) -> dict:
    others = [r for r in range(n) if r != rid]
    kind = rng.choice(["equivocate-propose", "selective-send", "lie-in-viewstate", "withhold-inform",
                       "silent", "crash-at", "ignore-inputs"])
    if kind == "equivocate-propose":
        rng.shuffle(others)
        cut = rng.randint(1, len(others) - 1)
        return {"behavior": kind, "groups": [sorted(others[:cut]), sorted(others[cut:])]}
    if kind == "selective-send":
        blackout = sorted(rng.sample(others, rng.randint(1, max(1, len(others) // 2))))
        spec = {"behavior": kind, "blackout": blackout}
        if rng.random() < 0.6:
            spec["kinds"] = sorted(rng.sample(["Propose", "Prepare", "CheckCommit", "Certify", "Support",
                                               "SupportCC", "CertifyCC", "ViewState", "NewView"], 2))
        return spec
    if kind == "crash-at":
        return {"behavior": kind, "time": round(rng.uniform(0, heal), 1)}
    if kind == "ignore-inputs":
        return {"behavior": kind, "kinds": sorted(rng.sample(["Propose", "Prepare", "CheckCommit", "Failure"], 1))}
    return {"behavior": kind}


def scenario_dict(seed: int, mode: str = "standard", n: int | None = None) -> dict:
    """The raw scenario document for one soak seed."""
    rng = random.Random(f"{mode}:{seed}")
    if n is None:
        n = rng.choice([4, 4, 4, 5, 7])
    f = (n - 1) // 3
    heal = float(rng.randint(20, 60))
    system: dict = {"n": n, "f": f, "window": rng.choice([2, 4, 16]), "catchup_poll": 16}
    if mode == "digest":
        system["digest_mode"] = True
    elif mode == "linear":
        system["linear"] = True
    faults = {}
    for rid in rng.sample(range(n), rng.randint(0, f)):
        faults[rid] = [_behavior(rng, rid, n, heal) for _ in range(rng.randint(1, 2))]
    network: dict = {"delay": 1.0}
    if rng.random() < 0.5:
        network["jitter"] = [0.5, 1.0]
    drops = []
    for _ in range(rng.randint(0, 3)):
        start = round(rng.uniform(0, heal - 5), 1)
        drops.append({"start": start, "end": round(rng.uniform(start + 1, heal), 1),
                      "prob": round(rng.uniform(0.1, 1.0), 2)}
                     | ({"to": [rng.randrange(n)]} if rng.random() < 0.5 else {}))
    if drops:
        network["drops"] = drops
    parts = []
    for _ in range(rng.randint(0, 2)):
        start = round(rng.uniform(0, heal - 5), 1)
        ids = list(range(n))
        rng.shuffle(ids)
        cut = rng.randint(1, n - 1)
        parts.append({"start": start, "end": round(rng.uniform(start + 1, heal), 1),
                      "groups": [sorted(ids[:cut]), sorted(ids[cut:])]})
    if parts:
        network["partitions"] = parts
    clients = ["c0", "c1"][: rng.randint(1, 2)]
    requests = [{"client": rng.choice(clients), "payload": f"SET k{i} v{seed}.{i}",
                 "time": round(rng.uniform(0, heal), 1)} for i in range(rng.randint(2, 6))]
    return {
        "name": f"soak-{mode}-{seed}",
        "system": system,
        "network": network,
        "faults": faults,
        "workload": {"requests": sorted(requests, key=lambda r: r["time"])},
        "checks": list(SOAK_CHECKS),
        "seed": seed,
        "duration": heal + 1500.0,
    }


def generate(seed: int, mode: str = "standard", n: int | None = None) -> Scenario:
    return from_dict(scenario_dict(seed, mode, n))


@dataclass
class SoakSummary:
    mode: str
    runs: int = 0
    failures: dict[int, dict[str, list[str]]] = field(default_factory=dict)
    # seed -> number of views non-faulty replicas entered after the last unreliable window
    views_after_heal: dict[int, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def failed(self, check: str) -> list[int]:
        return sorted(s for s, bad in self.failures.items() if check in bad)


def views_after_heal(trace: Trace) -> int:
    heal = trace.header["heal_time"]
    faulty = set(trace.header["faulty"])
    return len({e[3]["view"] for e in trace.of("view_entered")
                if e[0] > heal and int(e[1][1:]) not in faulty})


def soak(seeds: Iterable[int], mode: str = "standard") -> SoakSummary:
    summary = SoakSummary(mode)
    for seed in seeds:
        result = run(generate(seed, mode), measure_bytes=False)
        summary.runs += 1
        summary.views_after_heal[seed] = views_after_heal(result.trace)
        bad = {name: [v.detail for v in res.violations]
               for name, res in result.report.results.items() if not res.ok}
        if bad:
            summary.failures[seed] = bad
    return summary

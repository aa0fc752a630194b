"""Trace capture, metrics and message accounting."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable

Event = tuple[float, str, str, dict]


def actor_name(address: Any) -> str:
    return f"r{address}" if isinstance(address, int) else str(address)


@dataclass
class Trace:
    header: dict
    events: list[Event] = field(default_factory=list)
    # (send time, src, dst, kind, size); inter-node messages only, self-delivery excluded
    messages: list[tuple[float, Any, Any, str, int]] = field(default_factory=list)
    # replica id -> [(time, src, kind, sha256 of encoding)] for observed replicas
    observations: dict[int, list[tuple[float, Any, str, str]]] = field(default_factory=dict)

    def add(self, t: float, actor: str, event: str, **data: Any) -> None:
        self.events.append((t, actor, event, data))

    def of(self, event: str) -> Iterable[Event]:
        return (e for e in self.events if e[2] == event)

    def final_states(self) -> dict[int, dict]:
        return {int(e[1][1:]): e[3] for e in self.of("final_state")}

    def to_jsonl(self) -> str:
        lines = [json.dumps({"t": 0.0, "actor": "sim", "event": "header", **self.header}, sort_keys=True)]
        for t, actor, event, data in self.events:
            body = json.dumps(data, sort_keys=True, default=_jsonable)
            digest = hashlib.sha256(body.encode()).hexdigest()[:16]
            lines.append(json.dumps({"t": t, "actor": actor, "event": event, "digest": digest, "data": json.loads(body)},
                                    sort_keys=True))
        return "\n".join(lines) + "\n"

    def projection(self, replica: int) -> list[tuple[float, Any, str, str]]:
        return list(self.observations.get(replica, []))


def _jsonable(value: Any) -> Any:
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, (set, frozenset, tuple)):
        return sorted(value, key=str)
    return str(value)


@dataclass
class Metrics:
    messages_by_kind: dict[str, int]
    bytes_by_replica: dict[str, dict[str, int]]
    latency_by_request: dict[str, dict[str, Any]]
    decisions_per_sec: float
    view_changes: int

    def as_dict(self) -> dict:
        return {
            "messages_by_kind": dict(sorted(self.messages_by_kind.items())),
            "bytes_by_replica": dict(sorted(self.bytes_by_replica.items())),
            "latency_by_request": dict(sorted(self.latency_by_request.items())),
            "decisions_per_sec": self.decisions_per_sec,
            "view_changes": self.view_changes,
        }


def compute_metrics(trace: Trace) -> Metrics:
    header = trace.header
    n = header["n"]
    faulty = set(header["faulty"])
    delta = header["delta"] or 1.0
    by_kind: dict[str, int] = {}
    by_replica = {actor_name(r): {"sent": 0, "received": 0} for r in range(n)}
    for _, src, dst, kind, size in trace.messages:
        by_kind[kind] = by_kind.get(kind, 0) + 1
        if isinstance(src, int):
            by_replica[actor_name(src)]["sent"] += size
        if isinstance(dst, int):
            by_replica[actor_name(dst)]["received"] += size
    submits = {e[3]["request"]: e[0] for e in trace.of("submit")}
    latency = {}
    for t, actor, _, data in trace.of("outcome"):
        start = submits.get(data["request"], 0.0)
        latency[data["request"]] = {
            "client": actor,
            "time": t - start,
            "delta_units": (t - start) / delta,
            "proof": data["proof"],
            "round": data["round"],
        }
    finals = {r: s for r, s in trace.final_states().items() if r not in faulty}
    committed = max((s["committed_prefix"] - len([x for x in s["fillers"] if x <= s["committed_prefix"]])
                     for s in finals.values()), default=0)
    end = max(header["end_time"], 1e-9)
    unit = header.get("time_unit_seconds", 1.0)
    views = max((s["entered_view"] for s in finals.values()), default=0)
    return Metrics(by_kind, by_replica, latency, committed / (end * unit), views)


def count_messages(trace: Trace, kinds: Iterable[str] | None = None, start: float = 0.0,
                   end: float = float("inf"), replicas_only: bool = True, per: int = 1) -> dict[str, float]:
    """Messages sent within [start, end), by kind, divided by ``per`` decisions.

    Self-deliveries never appear in the trace; ``replicas_only`` keeps only
    replica-to-replica traffic.
    """
    wanted = None if kinds is None else set(kinds)
    counts: dict[str, float] = {}
    for t, src, dst, kind, _ in trace.messages:
        if not start <= t < end:
            continue
        if replicas_only and not (isinstance(src, int) and isinstance(dst, int)):
            continue
        if wanted is not None and kind not in wanted:
            continue
        counts[kind] = counts.get(kind, 0) + 1
    if per != 1:
        counts = {k: v / per for k, v in counts.items()}
    counts["total"] = sum(counts.values())
    return counts


def execution_latency(trace: Trace) -> dict[int, dict[str, Any]]:
    """Per round: time from the primary's Propose send to each non-faulty execution in that view."""
    faulty = {f"r{r}" for r in trace.header["faulty"]}
    delta = trace.header["delta"] or 1.0
    proposed: dict[tuple[int, int], float] = {}
    out: dict[int, dict[str, Any]] = {}
    for t, actor, event, data in trace.events:
        key = (data.get("view"), data.get("round"))
        if event == "proposed":
            proposed.setdefault(key, t)
        elif event == "executed" and actor not in faulty and key in proposed:
            entry = out.setdefault(data["round"], {"view": key[0], "proposed": proposed[key], "executed": {}})
            if entry["view"] == key[0]:
                entry["executed"].setdefault(actor, t - proposed[key])
    for entry in out.values():
        entry["delta_units"] = max(entry["executed"].values()) / delta
    return dict(sorted(out.items()))

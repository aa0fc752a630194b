"""Scenario files: YAML documents describing one simulation.

Top-level keys: ``system``, ``network``, ``faults``, ``workload``, ``checks``,
``seed``, ``duration``, plus the optional ``name``, ``observe`` and
``variants``. Errors carry the line of the offending node.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Any

import yaml

from ..core.config import ConfigError, SystemConfig

Address = int | str

TOP_KEYS = ("name", "system", "network", "faults", "workload", "checks", "seed", "duration", "observe", "variants")
SYSTEM_KEYS = {
    "n": "n", "f": "f", "window": "window", "linear": "linear_mode", "digest_mode": "digest_mode",
    "delta": "delta_initial", "request_bound": "request_bound", "merge_primary_prepare": "merge_primary_prepare",
    "emit_recovery_cc": "emit_recovery_cc", "backoff": "backoff", "delta_cap_factor": "delta_cap_factor",
    "forward_rate": "forward_rate", "catchup_poll": "catchup_poll", "retransmit": "retransmit",
    "client_resend_factor": "client_resend_factor", "linear_filler": "linear_filler",
}
NETWORK_KEYS = ("delay", "jitter", "links", "drops", "partitions")
CHECK_NAMES = ("non_divergence", "poe_preservation", "view_sync", "liveness")
BEHAVIORS = {
    "silent": (),
    "crash-at": ("time",),
    "equivocate-propose": ("groups", "start", "end", "rounds"),
    "selective-send": ("blackout", "kinds", "rounds", "start", "end"),
    "lie-in-viewstate": ("start", "end"),
    "withhold-inform": ("start", "end"),
    "ignore-inputs": ("kinds", "rounds", "start", "end"),
    "split-new-view": ("view", "groups", "states"),
    "scripted": ("rules",),
}


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None) -> None:
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.detail = message


# ---------------------------------------------------------------- YAML nodes
def _to_python(node: yaml.Node, path: tuple, marks: dict[tuple, int]) -> Any:
    marks[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = yaml.safe_load(yaml.serialize(key_node))
            if key in out:
                raise ScenarioError(f"duplicate key {key!r}", key_node.start_mark.line + 1)
            out[key] = _to_python(value_node, path + (key,), marks)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, path + (i,), marks) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def load_raw(text: str) -> tuple[dict, dict[tuple, int]]:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                            mark.line + 1 if mark else None) from None
    if node is None:
        raise ScenarioError("empty scenario", 1)
    marks: dict[tuple, int] = {}
    raw = _to_python(node, (), marks)
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a mapping", 1)
    return raw, marks


# ------------------------------------------------------------------- model
@dataclass(frozen=True)
class RequestSpec:
    client: str
    payload: bytes
    time: float


@dataclass(frozen=True)
class TimeoutSpec:
    """Forced expiry of the current failure-detection timer at the given replicas."""

    time: float
    replicas: tuple[int, ...]


@dataclass(frozen=True)
class DropRule:
    start: float
    end: float
    src: frozenset | None
    dst: frozenset | None
    kinds: frozenset | None
    prob: float


@dataclass(frozen=True)
class Partition:
    start: float
    end: float
    groups: tuple[frozenset, ...]


@dataclass(frozen=True)
class NetworkSpec:
    delay: float = 1.0
    jitter: tuple[float, float] | None = None
    links: tuple[tuple[Address, Address, float], ...] = ()
    drops: tuple[DropRule, ...] = ()
    partitions: tuple[Partition, ...] = ()

    @property
    def max_delay(self) -> float:
        cands = [self.delay] + [d for _, _, d in self.links]
        if self.jitter is not None:
            cands.append(self.jitter[1])
        return max(cands)

    def unreliable_windows(self) -> list[tuple[float, float]]:
        return sorted([(d.start, d.end) for d in self.drops] + [(p.start, p.end) for p in self.partitions])

    @property
    def heal_time(self) -> float:
        return max([0.0] + [end for _, end in self.unreliable_windows()])


@dataclass(frozen=True)
class Scenario:
    name: str
    config: SystemConfig
    network: NetworkSpec
    faults: dict[int, tuple[dict, ...]]
    requests: tuple[RequestSpec, ...]
    timeouts: tuple[TimeoutSpec, ...]
    checks: tuple[str, ...]
    seed: int
    duration: float
    observe: tuple[int, ...] = ()
    variants: dict[str, dict] = field(default_factory=dict)
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def faulty(self) -> frozenset[int]:
        return frozenset(self.faults)

    @property
    def clients(self) -> tuple[str, ...]:
        return tuple(sorted({r.client for r in self.requests}))

    def variant(self, name: str) -> "Scenario":
        base = {k: v for k, v in self.raw.items() if k != "variants"}
        merged = deep_merge(base, self.variants[name])
        merged["name"] = f"{self.name}/{name}"
        return from_dict(merged)

    def with_overrides(self, overrides: list[str]) -> "Scenario":
        return from_dict(apply_overrides(self.raw, overrides))


def deep_merge(base: dict, patch: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in patch.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        elif value is None:
            out.pop(key, None)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ScenarioError(f"override {item!r} must look like key=value")
        path, _, text = item.partition("=")
        keys = path.strip().split(".")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError:
            raise ScenarioError(f"override {item!r} has an unparsable value") from None
        node = out
        for k in keys[:-1]:
            k = _maybe_int(k)
            if not isinstance(node.get(k), dict):
                node[k] = {}
            node = node[k]
        node[_maybe_int(keys[-1])] = value
    return out


def _maybe_int(key: str) -> Any:
    return int(key) if key.isdigit() else key


# ------------------------------------------------------------------ builder
class _Builder:
    def __init__(self, marks: dict[tuple, int]) -> None:
        self.marks = marks

    def fail(self, path: tuple, message: str) -> ScenarioError:
        while path and path not in self.marks:
            path = path[:-1]
        return ScenarioError(message, self.marks.get(path))

    def number(self, value: Any, path: tuple, minimum: float | None = 0.0, integer: bool = False) -> Any:
        ok = isinstance(value, int) if integer else isinstance(value, (int, float))
        if not ok or isinstance(value, bool):
            raise self.fail(path, f"{'.'.join(map(str, path))} must be {'an integer' if integer else 'a number'}")
        if isinstance(value, float) and not math.isfinite(value):
            raise self.fail(path, f"{'.'.join(map(str, path))} must be finite")
        if minimum is not None and value < minimum:
            raise self.fail(path, f"{'.'.join(map(str, path))} must be >= {minimum}")
        return value

    def mapping(self, value: Any, path: tuple, allowed: tuple | None = None) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            raise self.fail(path, f"{'.'.join(map(str, path)) or 'document'} must be a mapping")
        if allowed is not None:
            for key in value:
                if key not in allowed:
                    raise self.fail(path + (key,), f"unknown key {key!r} under {'.'.join(map(str, path)) or 'top level'}")
        return value

    def sequence(self, value: Any, path: tuple) -> list:
        if value is None:
            return []
        if not isinstance(value, list):
            raise self.fail(path, f"{'.'.join(map(str, path))} must be a list")
        return value

    def replica(self, value: Any, path: tuple, n: int) -> int:
        if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < n:
            raise self.fail(path, f"replica id {value!r} out of range 0..{n - 1}")
        return value

    def address(self, value: Any, path: tuple, n: int) -> Address:
        if isinstance(value, str):
            return value
        return self.replica(value, path, n)

    def addresses(self, value: Any, path: tuple, n: int) -> frozenset | None:
        if value is None:
            return None
        if not isinstance(value, list):
            value = [value]
        return frozenset(self.address(v, path + (i,), n) for i, v in enumerate(value))

    def window(self, spec: dict, path: tuple) -> tuple[float, float]:
        start = self.number(spec.get("start", 0.0), path + ("start",))
        end = spec.get("end", math.inf)
        if end != math.inf:
            end = self.number(end, path + ("end",))
        if end < start:
            raise self.fail(path, "window ends before it starts")
        return float(start), float(end)

    # -- sections --
    def system(self, raw: Any) -> SystemConfig:
        spec = self.mapping(raw, ("system",), tuple(SYSTEM_KEYS))
        for key in ("n", "f"):
            if key not in spec:
                raise self.fail(("system",), f"system.{key} is required")
        kwargs = {}
        for key, value in spec.items():
            if key in ("n", "f", "window", "request_bound", "delta_cap_factor", "forward_rate"):
                value = self.number(value, ("system", key), integer=True)
            elif key in ("linear", "digest_mode", "merge_primary_prepare", "emit_recovery_cc", "retransmit",
                         "linear_filler"):
                if not isinstance(value, bool):
                    raise self.fail(("system", key), f"system.{key} must be true or false")
            elif key == "delta":
                if isinstance(value, list):
                    value = tuple(self.number(v, ("system", key, i)) for i, v in enumerate(value))
                else:
                    value = self.number(value, ("system", key))
            elif key in ("catchup_poll", "client_resend_factor"):
                value = None if value is None else self.number(value, ("system", key))
            kwargs[SYSTEM_KEYS[key]] = value
        try:
            return SystemConfig(**kwargs)
        except ConfigError as exc:
            raise self.fail(("system",), f"invalid system: {exc}") from None

    def network(self, raw: Any, n: int) -> NetworkSpec:
        spec = self.mapping(raw, ("network",), NETWORK_KEYS)
        delay = float(self.number(spec.get("delay", 1.0), ("network", "delay")))
        jitter = None
        if spec.get("jitter") is not None:
            j = self.sequence(spec["jitter"], ("network", "jitter"))
            if len(j) != 2:
                raise self.fail(("network", "jitter"), "network.jitter must be [low, high]")
            lo = self.number(j[0], ("network", "jitter", 0))
            hi = self.number(j[1], ("network", "jitter", 1))
            if hi < lo:
                raise self.fail(("network", "jitter"), "jitter high bound below low bound")
            jitter = (float(lo), float(hi))
        links = []
        for key, value in sorted(self.mapping(spec.get("links"), ("network", "links")).items(), key=str):
            path = ("network", "links", key)
            parts = str(key).split("->")
            if len(parts) != 2:
                raise self.fail(path, f"link key {key!r} must look like 'a->b'")
            ends = [self.address(_maybe_int(p.strip()), path, n) for p in parts]
            links.append((ends[0], ends[1], float(self.number(value, path))))
        drops = []
        for i, d in enumerate(self.sequence(spec.get("drops"), ("network", "drops"))):
            path = ("network", "drops", i)
            d = self.mapping(d, path, ("start", "end", "from", "to", "kinds", "prob"))
            start, end = self.window(d, path)
            prob = float(self.number(d.get("prob", 1.0), path + ("prob",)))
            if prob > 1:
                raise self.fail(path + ("prob",), "drop probability must be within [0, 1]")
            kinds = d.get("kinds")
            drops.append(DropRule(start, end, self.addresses(d.get("from"), path + ("from",), n),
                                  self.addresses(d.get("to"), path + ("to",), n),
                                  None if kinds is None else frozenset(self.sequence(kinds, path + ("kinds",))),
                                  prob))
        parts_ = []
        for i, p in enumerate(self.sequence(spec.get("partitions"), ("network", "partitions"))):
            path = ("network", "partitions", i)
            p = self.mapping(p, path, ("start", "end", "groups"))
            start, end = self.window(p, path)
            groups = tuple(self.addresses(g, path + ("groups", j), n)
                           for j, g in enumerate(self.sequence(p.get("groups"), path + ("groups",))))
            if len(groups) < 2:
                raise self.fail(path, "a partition needs at least two groups")
            parts_.append(Partition(start, end, groups))
        return NetworkSpec(delay, jitter, tuple(links), tuple(drops), tuple(parts_))

    def behavior(self, spec: Any, path: tuple, n: int) -> dict:
        if isinstance(spec, str):
            spec = {"behavior": spec}
        spec = self.mapping(spec, path)
        name = spec.get("behavior")
        if name not in BEHAVIORS:
            raise self.fail(path, f"unknown behavior {name!r}")
        allowed = BEHAVIORS[name]
        out: dict[str, Any] = {"behavior": name}
        for key, value in spec.items():
            if key == "behavior":
                continue
            if key not in allowed:
                raise self.fail(path + (key,), f"behavior {name} does not take {key!r}")
            kpath = path + (key,)
            if key in ("start", "end", "time"):
                out[key] = float(self.number(value, kpath))
            elif key == "view":
                out[key] = self.number(value, kpath, integer=True)
            elif key in ("blackout",):
                out[key] = sorted(self.addresses(value, kpath, n), key=str)
            elif key in ("kinds",):
                out[key] = sorted(str(k) for k in self.sequence(value, kpath))
            elif key == "rounds":
                out[key] = sorted(self.number(r, kpath + (i,), 1, True) for i, r in enumerate(self.sequence(value, kpath)))
            elif key in ("groups", "states"):
                out[key] = [sorted(self.replica(r, kpath + (i, j), n) for j, r in enumerate(self.sequence(g, kpath + (i,))))
                            if key == "groups" else
                            [self.replica(r, kpath + (i, j), n) for j, r in enumerate(self.sequence(g, kpath + (i,)))]
                            for i, g in enumerate(self.sequence(value, kpath))]
            elif key == "rules":
                out[key] = [self.behavior(r, kpath + (i,), n) for i, r in enumerate(self.sequence(value, kpath))]
        if name == "crash-at" and "time" not in out:
            raise self.fail(path, "crash-at needs a time")
        if name == "selective-send" and "blackout" not in out:
            raise self.fail(path, "selective-send needs a blackout set")
        if name == "split-new-view" and ("groups" not in out or "states" not in out
                                         or len(out["groups"]) != len(out["states"])):
            raise self.fail(path, "split-new-view needs matching groups and states")
        return out

    def faults(self, raw: Any, config: SystemConfig) -> dict[int, tuple[dict, ...]]:
        spec = self.mapping(raw, ("faults",))
        out = {}
        for key, value in spec.items():
            rid = self.replica(_maybe_int(str(key)), ("faults", key), config.n)
            items = value if isinstance(value, list) else [value]
            out[rid] = tuple(self.behavior(b, ("faults", key, i), config.n) for i, b in enumerate(items))
        if len(out) > config.f:
            raise self.fail(("faults",), f"{len(out)} faulty replicas exceed f={config.f}")
        return dict(sorted(out.items()))

    def workload(self, raw: Any, n: int) -> tuple[tuple[RequestSpec, ...], tuple[TimeoutSpec, ...]]:
        spec = self.mapping(raw, ("workload",), ("requests", "timeouts"))
        reqs = []
        for i, r in enumerate(self.sequence(spec.get("requests"), ("workload", "requests"))):
            path = ("workload", "requests", i)
            r = self.mapping(r, path, ("client", "payload", "time"))
            client = r.get("client", "c0")
            if not isinstance(client, str) or not client or client.startswith(("r", "x")):
                raise self.fail(path + ("client",), "client ids must be strings not starting with 'r' or 'x'")
            payload = r.get("payload", "NOOP")
            if not isinstance(payload, str):
                raise self.fail(path + ("payload",), "payload must be a string")
            reqs.append(RequestSpec(client, payload.encode(), float(self.number(r.get("time", 0.0), path + ("time",)))))
        touts = []
        for i, t in enumerate(self.sequence(spec.get("timeouts"), ("workload", "timeouts"))):
            path = ("workload", "timeouts", i)
            t = self.mapping(t, path, ("time", "replicas"))
            reps = self.sequence(t.get("replicas"), path + ("replicas",))
            touts.append(TimeoutSpec(float(self.number(t.get("time", 0.0), path + ("time",))),
                                     tuple(self.replica(x, path + ("replicas", j), n) for j, x in enumerate(reps))))
        return tuple(reqs), tuple(touts)


def from_dict(raw: dict, marks: dict[tuple, int] | None = None) -> Scenario:
    b = _Builder(marks or {})
    raw = b.mapping(raw, (), TOP_KEYS)
    if "system" not in raw:
        raise b.fail((), "missing required key 'system'")
    config = b.system(raw["system"])
    network = b.network(raw.get("network"), config.n)
    faults = b.faults(raw.get("faults"), config)
    requests, timeouts = b.workload(raw.get("workload"), config.n)
    checks = tuple(b.sequence(raw.get("checks", ["non_divergence", "poe_preservation"]), ("checks",)))
    for i, c in enumerate(checks):
        if c not in CHECK_NAMES:
            raise b.fail(("checks", i), f"unknown check {c!r}")
    seed = b.number(raw.get("seed", 0), ("seed",), None, True)
    duration = float(b.number(raw.get("duration", 100.0), ("duration",)))
    observe = tuple(b.replica(x, ("observe", i), config.n) for i, x in enumerate(b.sequence(raw.get("observe"), ("observe",))))
    variants = b.mapping(raw.get("variants"), ("variants",))
    for key, value in variants.items():
        b.mapping(value, ("variants", key))
    name = raw.get("name", "scenario")
    if not isinstance(name, str):
        raise b.fail(("name",), "name must be a string")
    canonical = to_raw(name, config, network, faults, requests, timeouts, checks, seed, duration, observe, variants)
    return Scenario(name, config, network, faults, requests, timeouts, checks, seed, duration, observe,
                    dict(variants), canonical)


def parse(text: str) -> Scenario:
    raw, marks = load_raw(text)
    return from_dict(raw, marks)


def load(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


# ---------------------------------------------------------- serialization
def _addr_list(values: frozenset | None) -> list | None:
    if values is None:
        return None
    return sorted(values, key=lambda v: (isinstance(v, str), str(v) if isinstance(v, str) else v))


def _window(start: float, end: float) -> dict:
    out: dict[str, Any] = {"start": start}
    if end != math.inf:
        out["end"] = end
    return out


def to_raw(name, config, network, faults, requests, timeouts, checks, seed, duration, observe, variants) -> dict:
    system: dict[str, Any] = {}
    defaults = SystemConfig(n=config.n, f=config.f)
    for key, attr in SYSTEM_KEYS.items():
        value = getattr(config, attr)
        if key in ("n", "f") or value != getattr(defaults, attr):
            system[key] = list(value) if isinstance(value, tuple) else value
    net: dict[str, Any] = {"delay": network.delay}
    if network.jitter is not None:
        net["jitter"] = list(network.jitter)
    if network.links:
        net["links"] = {f"{a}->{b}": d for a, b, d in network.links}
    if network.drops:
        net["drops"] = []
        for d in network.drops:
            item = _window(d.start, d.end)
            for key, vals in (("from", d.src), ("to", d.dst)):
                if vals is not None:
                    item[key] = _addr_list(vals)
            if d.kinds is not None:
                item["kinds"] = sorted(d.kinds)
            item["prob"] = d.prob
            net["drops"].append(item)
    if network.partitions:
        net["partitions"] = [dict(_window(p.start, p.end), groups=[_addr_list(g) for g in p.groups])
                             for p in network.partitions]
    out: dict[str, Any] = {
        "name": name,
        "system": system,
        "network": net,
        "faults": {rid: [dict(b) for b in behaviors] for rid, behaviors in faults.items()},
        "workload": {"requests": [{"client": r.client, "payload": r.payload.decode(), "time": r.time}
                                  for r in requests]},
        "checks": list(checks),
        "seed": seed,
        "duration": duration,
    }
    if timeouts:
        out["workload"]["timeouts"] = [{"time": t.time, "replicas": list(t.replicas)} for t in timeouts]
    if observe:
        out["observe"] = list(observe)
    if variants:
        out["variants"] = copy.deepcopy(variants)
    return out


def dump(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.raw, sort_keys=True, default_flow_style=None)

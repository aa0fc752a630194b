"""Discrete-event driver: one global event queue over replicas, clients and the network.

Ties at equal times are broken by (event class, sender rank, global sequence):
deliveries and submissions precede timers, replicas rank by id and clients
after all replicas.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
from dataclasses import dataclass
from typing import Any

from ..actions import Broadcast, CancelTimer, Executed, Note, RolledBack, Send, SetTimer
from ..auth import SimulatedAuth
from ..client import Client
from ..core.codec import encode
from ..core.config import replica_identity
from ..core.messages import Inform, request_digest
from ..core.validation import Validator
from ..replica import Replica
from .byzantine import FaultyReplica, rules_from_behaviors
from .checks import CheckReport, run_checks
from .network import Network
from .scenario import Scenario
from .trace import Metrics, Trace, actor_name, compute_metrics

TIME_UNIT_SECONDS = 1e-3

_MSG, _TIMER = 0, 1
_DELIVER, _FIRE, _SUBMIT, _TIMEOUT = range(4)


@dataclass
class RunResult:
    scenario: Scenario
    trace: Trace
    metrics: Metrics
    report: CheckReport
    replicas: dict[int, Replica]
    clients: dict[str, Client]


class Simulation:
    def __init__(self, scenario: Scenario, detail: bool = False, measure_bytes: bool = True) -> None:
        self.scenario = scenario
        self.cfg = cfg = scenario.config
        self.detail = detail
        self.measure_bytes = measure_bytes
        self.n = cfg.n
        clients = scenario.clients
        alt = [f"x{r}" for r in scenario.faults]
        self.auth = SimulatedAuth(scenario.seed, cfg, list(clients) + alt)
        public = self.auth.public
        self.validator = Validator(cfg, public)
        self.network = Network(scenario.network, scenario.seed)
        self.nodes: dict[Any, Any] = {}
        self.replicas: dict[int, Replica] = {}
        for rid in range(cfg.n):
            signer = self.auth.signer(replica_identity(rid))
            if rid in scenario.faults:
                rules = rules_from_behaviors(scenario.faults[rid], rid, cfg.n)
                node = FaultyReplica(rid, cfg, signer, public, self.validator, rules, self.auth.signer(f"x{rid}"))
            else:
                node = Replica(rid, cfg, signer, public, self.validator)
            self.replicas[rid] = node
            self.nodes[rid] = node
        self.clients = {c: Client(c, cfg, self.auth.signer(c), public, self.validator) for c in clients}
        self.nodes.update(self.clients)
        self.rank = {rid: rid for rid in range(cfg.n)}
        for i, c in enumerate(clients):
            self.rank[c] = cfg.n + i
        self.queue: list = []
        self.seq = itertools.count()
        self.timer_version: dict[tuple, int] = {}
        self.observe = set(scenario.observe)
        self.now = 0.0
        net = scenario.network
        self.trace = Trace({
            "scenario": scenario.name,
            "seed": scenario.seed,
            "n": cfg.n,
            "f": cfg.f,
            "mode": "linear" if cfg.linear_mode else ("digest" if cfg.digest_mode else "standard"),
            "faulty": sorted(scenario.faults),
            "delta": net.max_delay,
            "fixed_delay": net.jitter is None and not net.links,
            "unreliable": [list(w) for w in net.unreliable_windows()],
            "heal_time": net.heal_time,
            "duration": scenario.duration,
            "end_time": scenario.duration,
            "time_unit_seconds": TIME_UNIT_SECONDS,
            "clients": list(clients),
        }, observations={r: [] for r in scenario.observe})

    # ----------------------------------------------------------- scheduling
    def _push(self, time: float, cls: int, rank: int, kind: int, payload: Any) -> None:
        heapq.heappush(self.queue, (time, cls, rank, next(self.seq), kind, payload))

    def _transmit(self, src: Any, dst: Any, msg: Any) -> None:
        if dst not in self.nodes:
            return
        kind = type(msg).__name__
        now = self.now
        size = len(encode(msg)) if self.measure_bytes else 0
        self.trace.messages.append((now, src, dst, kind, size))
        if type(msg) is Inform:
            self.trace.add(now, actor_name(src), "inform", client=dst, digest=msg.request_digest.hex(),
                           view=msg.view, round=msg.round, result=msg.result.hex())
        if self.detail:
            self.trace.add(now, actor_name(src), "send", dst=actor_name(dst), kind=kind, bytes=size)
        if self.network.dropped(src, dst, kind, now):
            if self.detail:
                self.trace.add(now, actor_name(src), "drop", dst=actor_name(dst), kind=kind)
            return
        self._push(now + self.network.delay(src, dst), _MSG, self.rank[src], _DELIVER, (dst, src, msg))

    def _apply(self, actor: Any, actions: list) -> None:
        name = None
        for action in actions:
            t = type(action)
            if t is Send:
                self._transmit(actor, action.dest, action.msg)
            elif t is Broadcast:
                for rid in range(self.n):
                    if rid != actor:
                        self._transmit(actor, rid, action.msg)
            elif t is SetTimer:
                key = (actor, action.timer_id)
                version = self.timer_version.get(key, 0) + 1
                self.timer_version[key] = version
                self._push(self.now + action.duration, _TIMER, self.rank[actor], _FIRE,
                           (actor, action.timer_id, version))
            elif t is CancelTimer:
                key = (actor, action.timer_id)
                if key in self.timer_version:
                    self.timer_version[key] += 1
            else:
                name = name or actor_name(actor)
                if t is Executed:
                    self.trace.add(self.now, name, "executed", round=action.round, view=action.view,
                                   digest=action.digest.hex(), result=action.result.hex())
                elif t is RolledBack:
                    self.trace.add(self.now, name, "rolled_back", to_round=action.to_round)
                elif t is Note:
                    self.trace.add(self.now, name, action.event, **action.data)

    # ------------------------------------------------------------------ run
    def run(self) -> RunResult:
        sc = self.scenario
        for rid, replica in self.replicas.items():
            self._apply(rid, replica.start(0.0))
        seqs: dict[str, int] = {}
        for spec in sc.requests:
            seqs[spec.client] = seqs.get(spec.client, 0) + 1
            req = self.clients[spec.client].make_request(spec.payload, seqs[spec.client])
            self._push(spec.time, _MSG, self.rank[spec.client], _SUBMIT, (spec.client, req))
        for spec in sc.timeouts:
            for rid in spec.replicas:
                self._push(spec.time, _TIMER, self.rank[rid], _TIMEOUT, rid)
        queue = self.queue
        duration = sc.duration
        while queue:
            time, _, _, _, kind, payload = heapq.heappop(queue)
            if time > duration:
                break
            self.now = time
            if kind == _DELIVER:
                dst, src, msg = payload
                if dst in self.observe:
                    digest = hashlib.sha256(encode(msg)).hexdigest()
                    self.trace.observations[dst].append((time, src, type(msg).__name__, digest))
                if self.detail:
                    self.trace.add(time, actor_name(dst), "recv", src=actor_name(src), kind=type(msg).__name__)
                self._apply(dst, self.nodes[dst].on_message(msg, time))
            elif kind == _FIRE:
                actor, tid, version = payload
                if self.timer_version.get((actor, tid)) == version:
                    self._apply(actor, self.nodes[actor].on_timer(tid, time))
            elif kind == _SUBMIT:
                client, req = payload
                self.trace.add(time, client, "submit", request=req.request_id,
                               digest=request_digest(req).hex())
                self._apply(client, self.clients[client].submit(req, time))
            else:
                replica = self.replicas[payload]
                self.trace.add(time, actor_name(payload), "forced_timeout", view=replica.view)
                self._apply(payload, replica.force_timeout(time))
        self.trace.header["end_time"] = duration if queue else self.now
        for rid, replica in self.replicas.items():
            self.trace.add(self.now, actor_name(rid), "final_state", **replica.snapshot())
        for cid, client in self.clients.items():
            self.trace.add(self.now, cid, "final_client",
                           outcomes={k: [o.round, o.result.hex(), o.proof, o.view]
                                     for k, o in sorted(client.outcomes.items())},
                           requests={r.request_id: d.hex() for d, r in client.requests.items()})
        metrics = compute_metrics(self.trace)
        report = run_checks(self.trace, sc.checks)
        return RunResult(sc, self.trace, metrics, report, self.replicas, self.clients)


def run(scenario: Scenario, detail: bool = False, measure_bytes: bool = True) -> RunResult:
    return Simulation(scenario, detail=detail, measure_bytes=measure_bytes).run()

"""Byzantine replicas: an honest replica core whose inputs and outputs are rewritten by rules.

A faulty replica only holds its own signer and an extra client identity
``x<id>`` used to author the conflicting requests of an equivocating primary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Hashable

from ..actions import Action, Broadcast, Send
from ..auth import PublicAuth, Signer
from ..core.codec import signable
from ..core.config import SystemConfig
from ..core.evidence import Signature
from ..core.messages import (
    Certify,
    CheckCommit,
    ClientRequest,
    DummyCC,
    Inform,
    InformCC,
    NewView,
    Prepare,
    Propose,
    Proposal,
    SupportCC,
    Support,
    ViewState,
    kind_of,
    request_digest,
)
from ..core.validation import Validator
from ..replica import Replica


@dataclass(frozen=True)
class Rule:
    action: str
    start: float = 0.0
    end: float = math.inf
    kinds: frozenset | None = None
    to: frozenset | None = None
    rounds: frozenset | None = None
    groups: tuple[tuple[int, ...], ...] = ()
    states: tuple[tuple[int, ...], ...] = ()
    view: int | None = None

    def active(self, now: float) -> bool:
        return self.start <= now < self.end

    def matches(self, msg: Any, dest: Any) -> bool:
        if self.kinds is not None and kind_of(msg) not in self.kinds:
            return False
        if self.to is not None and dest not in self.to:
            return False
        if self.rounds is not None and round_of(msg) not in self.rounds:
            return False
        return True


def round_of(msg: Any) -> int | None:
    if isinstance(msg, (Propose, Prepare, CheckCommit, Support)):
        return msg.proposal.round
    if isinstance(msg, Certify):
        return msg.pc.round
    if isinstance(msg, (SupportCC, Inform, InformCC)):
        return msg.round
    return None


def _set(values: Any) -> frozenset | None:
    return None if values is None else frozenset(values)


def rules_from_behaviors(behaviors: tuple[dict, ...], rid: int, n: int) -> tuple[Rule, ...]:
    rules: list[Rule] = []
    for spec in behaviors:
        name = spec["behavior"]
        window = {"start": spec.get("start", 0.0), "end": spec.get("end", math.inf)}
        if name == "silent":
            rules.append(Rule("drop"))
        elif name == "crash-at":
            rules.append(Rule("drop", start=spec["time"]))
            rules.append(Rule("ignore", start=spec["time"]))
        elif name == "equivocate-propose":
            groups = spec.get("groups")
            if not groups:
                others = [r for r in range(n) if r != rid]
                half = len(others) // 2
                groups = [others[:half], others[half:]]
            rules.append(Rule("equivocate", groups=tuple(tuple(g) for g in groups),
                              rounds=_set(spec.get("rounds")), **window))
        elif name == "selective-send":
            rules.append(Rule("drop", to=_set(spec["blackout"]), kinds=_set(spec.get("kinds")),
                              rounds=_set(spec.get("rounds")), **window))
        elif name == "lie-in-viewstate":
            rules.append(Rule("lie", **window))
        elif name == "withhold-inform":
            rules.append(Rule("drop", kinds=frozenset({"Inform", "InformCC"}), **window))
        elif name == "ignore-inputs":
            rules.append(Rule("ignore", kinds=_set(spec.get("kinds")), rounds=_set(spec.get("rounds")), **window))
        elif name == "split-new-view":
            rules.append(Rule("split", groups=tuple(tuple(g) for g in spec["groups"]),
                              states=tuple(tuple(s) for s in spec["states"]), view=spec.get("view")))
        elif name == "scripted":
            rules.extend(rules_from_behaviors(tuple(spec.get("rules", ())), rid, n))
    return tuple(rules)


class FaultyReplica(Replica):
    def __init__(self, rid: int, config: SystemConfig, signer: Signer, auth: PublicAuth,
                 validator: Validator, rules: tuple[Rule, ...], alt_signer: Signer | None = None) -> None:
        super().__init__(rid, config, signer, auth, validator)
        self.rules = rules
        self.alt_signer = alt_signer
        self._conflicts: dict[tuple[int, int], Propose] = {}
        self._lies: dict[int, ViewState] = {}
        self._all_states: dict[int, dict[int, ViewState]] = {}
        self._split_done: set[int] = set()

    # -- inputs --
    def on_message(self, msg: Any, now: float) -> list[Action]:
        for rule in self.rules:
            if rule.action == "ignore" and rule.active(now) and rule.matches(msg, self.id):
                return []
        return super().on_message(msg, now)

    def on_timer(self, timer_id: Hashable, now: float) -> list[Action]:
        for rule in self.rules:
            if rule.action == "ignore" and rule.kinds is None and rule.active(now):
                return []
        return super().on_timer(timer_id, now)

    # -- outputs --
    def _tamper(self, msg: Any, dest: Any) -> Any:
        now = self.now
        for rule in self.rules:
            if msg is None:
                return None
            if not rule.active(now):
                continue
            action = rule.action
            if action == "drop":
                if rule.matches(msg, dest):
                    return None
            elif action == "lie":
                if isinstance(msg, ViewState):
                    msg = self._lie(msg)
            elif action == "equivocate":
                if (isinstance(msg, Propose) and any(dest in g for g in rule.groups[1:])
                        and (rule.rounds is None or msg.proposal.round in rule.rounds)):
                    msg = self._conflict(msg)
            elif action == "split":
                if isinstance(msg, NewView) and (rule.view is None or rule.view == msg.view):
                    return None
        return msg

    def _broadcast(self, msg: Any) -> None:
        self._local.append(msg)
        outs = [(d, self._tamper(msg, d)) for d in range(self.cfg.n) if d != self.id]
        if all(m is msg for _, m in outs):
            self._out.append(Broadcast(msg))
            return
        for d, m in outs:
            if m is not None:
                self._out.append(Send(d, m))

    def _send(self, dest: int | str, msg: Any) -> None:
        if dest == self.id:
            if isinstance(msg, ViewState) and any(r.action == "lie" and r.active(self.now) for r in self.rules):
                msg = self._lie(msg)
            self._local.append(msg)
            return
        msg = self._tamper(msg, dest)
        if msg is not None:
            self._out.append(Send(dest, msg))

    # -- forged content, signed only with this replica's own keys --
    def _lie(self, vs: ViewState) -> ViewState:
        lie = self._lies.get(vs.view)
        if lie is None:
            lie = self._make(ViewState, sender=self.id, view=vs.view, cc=DummyCC(), executed=(), requests=())
            self._lies[vs.view] = lie
        return lie

    def _conflict(self, msg: Propose) -> Propose:
        prop = msg.proposal
        key = (prop.view, prop.round)
        have = self._conflicts.get(key)
        if have is not None:
            return have
        if self.alt_signer is None:
            return msg
        alt = self.alt_signer.identity
        payload = f"SET {alt} {prop.view}.{prop.round}".encode()
        seq = prop.view * 1_000_000 + prop.round
        tmp = ClientRequest(alt, seq, payload, Signature("", b""))
        req = ClientRequest(alt, seq, payload, self.alt_signer.sign(signable(tmp)))
        embed = req if self.cfg.carries_requests else None
        forged = self._make(Proposal, view=prop.view, round=prop.round, digest=request_digest(req), request=embed)
        out = self._make(Propose, sender=self.id, proposal=forged, request=None if embed is not None else req)
        self._conflicts[key] = out
        return out

    # -- split new-view proposals --
    def on_view_state(self, msg: ViewState) -> None:
        self._all_states.setdefault(msg.view, {})[msg.sender] = msg
        super().on_view_state(msg)
        w = msg.view + 1
        for rule in self.rules:
            if rule.action != "split" or (rule.view is not None and rule.view != w) or w in self._split_done:
                continue
            if self.id != w % self.cfg.n:
                continue
            have = self._all_states[msg.view]
            if not all(s in have for states in rule.states for s in states):
                continue
            self._split_done.add(w)
            for group, states in zip(rule.groups, rule.states):
                nv = self._make(NewView, sender=self.id, view=w, states=tuple(have[s] for s in states))
                for dest in group:
                    if dest == self.id:
                        self._local.append(nv)
                    else:
                        self._out.append(Send(dest, nv))

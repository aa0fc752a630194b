from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import pytest

from poe.actions import Broadcast, Send
from poe.auth import SimulatedAuth
from poe.client import Client
from poe.core.codec import signable
from poe.core.config import SystemConfig, replica_identity
from poe.core.evidence import Signature
from poe.core.messages import ClientRequest, Proposal, Propose, Request, request_digest
from poe.core.validation import Validator
from poe.replica import Replica
from poe.simulator import from_dict


@dataclass
class Deployment:
    """Replicas and a client sharing one key setup, driven by hand."""

    cfg: SystemConfig
    auth: SimulatedAuth
    validator: Validator
    replicas: list[Replica]
    client: Client

    def request(self, payload: bytes = b"SET k v", seq: int = 1) -> ClientRequest:
        req = self.client.make_request(payload, seq)
        self.client.submit(req)
        return req

    def client_message(self, req: ClientRequest) -> Request:
        tmp = Request(self.client.id, req, Signature("", b""))
        return Request(self.client.id, req, self.client.signer.sign(signable(tmp)))

    def propose(self, req: ClientRequest, view: int = 0, rnd: int = 1) -> Propose:
        primary = self.replicas[view % self.cfg.n]
        embed = req if self.cfg.carries_requests else None
        prop = primary._make(Proposal, view=view, round=rnd, digest=request_digest(req), request=embed)
        return primary._make(Propose, sender=primary.id, proposal=prop,
                             request=None if embed is not None else req)

    def pump(self, origin: int | str, actions, drop=lambda src, dest, msg: False, limit: int = 10_000) -> list:
        """Deliver messages until quiescent, ignoring timers; returns (src, dest, msg) in delivery order."""
        queue = deque((origin, a) for a in actions)
        delivered = []
        while queue and len(delivered) < limit:
            src, action = queue.popleft()
            if isinstance(action, Broadcast):
                dests = [r for r in range(self.cfg.n) if r != src]
            elif isinstance(action, Send):
                dests = [action.dest]
            else:
                continue
            for dest in dests:
                if drop(src, dest, action.msg):
                    continue
                delivered.append((src, dest, action.msg))
                target = self.client if dest == self.client.id else self.replicas[dest]
                queue.extend((dest, a) for a in target.on_message(action.msg, 0.0))
        return delivered


def make_deployment(n: int = 4, f: int = 1, **kwargs) -> Deployment:
    cfg = SystemConfig(n=n, f=f, **kwargs)
    auth = SimulatedAuth(0, cfg, ["c0"])
    validator = Validator(cfg, auth.public)
    replicas = [Replica(r, cfg, auth.signer(replica_identity(r)), auth.public, validator) for r in range(n)]
    client = Client("c0", cfg, auth.signer("c0"), auth.public, validator)
    return Deployment(cfg, auth, validator, replicas, client)


def sent(actions, kind: str) -> list:
    """Messages of one kind among Send/Broadcast actions."""
    return [a.msg for a in actions if isinstance(a, (Send, Broadcast)) and type(a.msg).__name__ == kind]


def simple_scenario(n: int = 4, f: int = 1, requests: int = 1, spacing: float = 10.0, start: float = 1.0,
                    duration: float | None = None, **system):
    reqs = [{"client": "c0", "payload": f"SET k{i} {i}", "time": start + spacing * i} for i in range(requests)]
    return from_dict({
        "system": {"n": n, "f": f, **system},
        "network": {"delay": 1},
        "workload": {"requests": reqs},
        "checks": ["non_divergence", "poe_preservation", "liveness"],
        "duration": duration if duration is not None else start + spacing * requests + 60,
    })


@pytest.fixture
def deployment() -> Deployment:
    return make_deployment()

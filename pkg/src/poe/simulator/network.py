"""Delay, drop and partition models driven by one seeded RNG."""
from __future__ import annotations

import random

from .scenario import Address, NetworkSpec


class Network:
    def __init__(self, spec: NetworkSpec, seed: int) -> None:
        self.spec = spec
        self.rng = random.Random(seed)
        self.links = {(a, b): d for a, b, d in spec.links}

    def delay(self, src: Address, dst: Address) -> float:
        if self.spec.jitter is not None:
            lo, hi = self.spec.jitter
            return self.rng.uniform(lo, hi)
        return self.links.get((src, dst), self.spec.delay)

    def dropped(self, src: Address, dst: Address, kind: str, now: float) -> bool:
        for part in self.spec.partitions:
            if part.start <= now < part.end:
                a = b = None
                for i, group in enumerate(part.groups):
                    if src in group:
                        a = i
                    if dst in group:
                        b = i
                if a is not None and b is not None and a != b:
                    return True
        for rule in self.spec.drops:
            if not rule.start <= now < rule.end:
                continue
            if rule.src is not None and src not in rule.src:
                continue
            if rule.dst is not None and dst not in rule.dst:
                continue
            if rule.kinds is not None and kind not in rule.kinds:
                continue
            if rule.prob >= 1.0 or self.rng.random() < rule.prob:
                return True
        return False

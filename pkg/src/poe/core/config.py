from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable


class ConfigError(ValueError):
    pass


def exponential_backoff(i: int) -> int:
    return 2 ** i


BACKOFF_FUNCTIONS: dict[str, Callable[[int], int]] = {
    "exp2": exponential_backoff,
    "linear": lambda i: max(1, i),
}


@dataclass(frozen=True)
class SystemConfig:
    """Static deployment parameters shared by every replica and client.

    ``delta_initial`` is either a single timeout estimate used by all replicas
    or a tuple with one estimate per replica.
    """

    n: int
    f: int
    window: int = 16
    delta_initial: float | tuple[float, ...] = 1.0
    linear_mode: bool = False
    digest_mode: bool = False
    request_bound: int = 4096
    merge_primary_prepare: bool = False
    emit_recovery_cc: bool = True
    backoff: str = "exp2"
    delta_cap_factor: int = 1024
    forward_rate: int = 8
    catchup_poll: float | None = None
    retransmit: bool = True
    client_resend_factor: float = 8.0
    linear_filler: bool = True
    _delta_table: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n < 1 or self.f < 0:
            raise ConfigError(f"n and f must be non-negative (n={self.n}, f={self.f})")
        if self.n <= 3 * self.f:
            raise ConfigError(f"need n > 3f, got n={self.n}, f={self.f}")
        if self.window < 1:
            raise ConfigError("window must be at least 1")
        if self.request_bound < 1:
            raise ConfigError("request bound must be positive")
        if self.backoff not in BACKOFF_FUNCTIONS:
            raise ConfigError(f"unknown backoff function {self.backoff!r}")
        if isinstance(self.delta_initial, (int, float)):
            table = (float(self.delta_initial),) * self.n
        else:
            table = tuple(float(x) for x in self.delta_initial)
            if len(table) != self.n:
                raise ConfigError(f"delta table has {len(table)} entries, need {self.n}")
        if any(x <= 0 for x in table):
            raise ConfigError("timeout estimates must be positive")
        object.__setattr__(self, "_delta_table", table)
        fn = BACKOFF_FUNCTIONS[self.backoff]
        if any(fn(i) < i for i in range(64)):
            raise ConfigError("backoff function must satisfy f(i) >= i")

    @property
    def nf(self) -> int:
        return self.n - self.f

    @property
    def linear(self) -> bool:
        return self.linear_mode

    @property
    def carries_requests(self) -> bool:
        """True when proposals embed the full request rather than its digest."""
        return not (self.digest_mode or self.linear_mode)

    def delta_of(self, replica: int) -> float:
        return self._delta_table[replica]

    def backoff_fn(self) -> Callable[[int], int]:
        return BACKOFF_FUNCTIONS[self.backoff]


def quorums(config: SystemConfig) -> tuple[int, int]:
    return config.n - config.f, config.f + 1


def primary_of(view: int, config: SystemConfig) -> int:
    return view % config.n


def aggregator_of(round_no: int, config: SystemConfig) -> int:
    return round_no % config.n


def replica_identity(rid: int) -> str:
    return f"r{rid}"

"""Normal-case cost formulas for PoE and the protocols it is compared against.

Message totals are polynomials in ``n`` and the request size ``C``. Evaluated
as a count, ``C`` stands for one message; evaluated in bytes, ``C`` is the
request size and every other term is a small message of ``M`` bytes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .core.config import BACKOFF_FUNCTIONS

KIB = 1024
GBIT_AS_BYTES = 10**9
UNIT_NOTE = "B = 1 Gbit/s is read as 10^9 bytes/s; only that reading reproduces the quoted figure"


@dataclass(frozen=True)
class Poly:
    """a*n*C + b*n^2 + c*n + d, plus an n^2 term owed to a separate checkpoint protocol."""

    nc: int = 0
    n2: int = 0
    n1: int = 0
    const: int = 0
    n2_checkpoint: int = 0

    def count(self, n: int, checkpoint: bool = True) -> int:
        return self.nc * n + self.n2 * n * n + self.n1 * n + self.const + (
            self.n2_checkpoint * n * n if checkpoint else 0)

    def size(self, n: int, request: int, small: int, checkpoint: bool = True) -> int:
        return self.nc * n * request + (self.count(n, checkpoint) - self.nc * n) * small

    def symbolic(self) -> str:
        parts = []
        if self.nc:
            parts.append("nC" if self.nc == 1 else f"{self.nc}nC")
        for coeff, name in ((self.n2, "n^2"), (self.n1, "n")):
            if coeff:
                parts.append(name if coeff == 1 else f"{coeff}{name}")
        if self.const:
            parts.append(str(self.const))
        if self.n2_checkpoint:
            parts.append("n^2[cp]")
        return " + ".join(parts) or "0"


@dataclass(frozen=True)
class ProtocolCost:
    name: str
    rounds_before_exec: int
    rounds_total: int
    total: Poly
    per_replica: Poly
    rounds_checkpoint: int = 0


PROTOCOLS: dict[str, ProtocolCost] = {
    p.name: p
    for p in (
        ProtocolCost("PoE", 2, 3, Poly(nc=1, n2=2), Poly(nc=1, n1=1)),
        ProtocolCost("Linear-PoE", 3, 5, Poly(nc=1, n1=4), Poly(nc=1, n1=1)),
        ProtocolCost("Pbft", 3, 4, Poly(nc=1, n2=3), Poly(nc=1, n1=2)),
        ProtocolCost("Zyzzyva-fast", 1, 1, Poly(nc=1), Poly(nc=1)),
        ProtocolCost("Sbft", 4, 5, Poly(nc=1, n1=4, n2_checkpoint=1), Poly(nc=1, const=3), rounds_checkpoint=1),
        ProtocolCost("HotStuff", 7, 8, Poly(nc=1, n1=3), Poly(nc=1, const=3)),
        ProtocolCost("MinBFT", 2, 2, Poly(nc=1, n2=1), Poly(nc=1, n1=1)),
    )
}


@dataclass(frozen=True)
class CostParams:
    n: int = 4
    request_size: int = 10 * KIB
    message_size: int = 256
    bandwidth: float = GBIT_AS_BYTES
    delay: float = 0.015
    protocol: str = "PoE"

    def __post_init__(self) -> None:
        if self.n < 1 or self.request_size <= 0 or self.message_size <= 0 or self.bandwidth <= 0 or self.delay <= 0:
            raise ValueError("cost parameters must be positive")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}; choose from {', '.join(PROTOCOLS)}")


def exact_messages(n: int, protocol: str, requests: int = 1, recovery_cc: bool = False) -> int:
    """Inter-replica messages per decision without the dropped off-by-one terms.

    ``requests`` weights the request-carrying Propose messages (1 counts them as
    single messages). Only the two PoE variants have an exact form.
    """
    if protocol == "PoE":
        return (n - 1) * requests + 2 * n * (n - 1)
    if protocol == "Linear-PoE":
        return (n - 1) * requests + (5 if recovery_cc else 4) * (n - 1)
    raise ValueError(f"no exact message count for {protocol}")


@dataclass(frozen=True)
class CostRow:
    protocol: str
    rounds_before_exec: int
    rounds_total: int
    rounds_total_label: str
    msgs_total: str
    msgs_per_replica_max: str
    msgs_total_count: int
    msgs_per_replica_count: int
    exact: str | None = None
    exact_count: int | None = None
    exact_with_recovery_count: int | None = None

    def as_tuple(self) -> tuple[int, int, str, str]:
        return self.rounds_before_exec, self.rounds_total, self.msgs_total, self.msgs_per_replica_max


def cost_row(params: CostParams) -> CostRow:
    proto = PROTOCOLS[params.protocol]
    n = params.n
    label = str(proto.rounds_total) + (f" + {proto.rounds_checkpoint}[cp]" if proto.rounds_checkpoint else "")
    exact = exact_count = with_rc = None
    if proto.name == "PoE":
        exact, exact_count = "(n-1)C + 2n(n-1)", exact_messages(n, "PoE")
    elif proto.name == "Linear-PoE":
        exact, exact_count = "(n-1)C + 4(n-1)", exact_messages(n, "Linear-PoE")
        with_rc = exact_messages(n, "Linear-PoE", recovery_cc=True)
    return CostRow(proto.name, proto.rounds_before_exec, proto.rounds_total, label,
                   proto.total.symbolic(), proto.per_replica.symbolic(),
                   proto.total.count(n), proto.per_replica.count(n), exact, exact_count, with_rc)


def cost_table(n: int = 4) -> list[CostRow]:
    return [cost_row(CostParams(n=n, protocol=name)) for name in PROTOCOLS]


def primary_bandwidth(params: CostParams, linear: bool = False) -> float:
    """Bytes the primary sends and receives per decision."""
    n, c, m = params.n, params.request_size, params.message_size
    if linear:
        return (n - 1) * (c + 2 * m + 3 * m / n)
    return (n - 1) * (c + 3 * m)


def throughput(params: CostParams, out_of_order: bool = False) -> float:
    """Decisions per second: latency bound when sequential, primary bandwidth bound otherwise."""
    if out_of_order:
        return params.bandwidth / primary_bandwidth(params)
    return 1.0 / (3 * params.delay)


@dataclass(frozen=True)
class BackoffRow:
    replica: int
    initial: float
    after: float
    first_sufficient: int
    ceil_bound: int


@dataclass
class BackoffTable:
    backoffs: int
    delay: float
    rows: list[BackoffRow] = field(default_factory=list)


def first_sufficient(initial: float, delay: float, fn: Callable[[int], int], limit: int = 64) -> int:
    for j in range(limit + 1):
        if fn(j) * initial >= delay:
            return j
    raise ValueError(f"estimate {initial} never reaches {delay} within {limit} backoffs")


def backoff_table(initial: list[float] | tuple[float, ...], delay: float, backoffs: int = 3,
                  backoff: str = "exp2") -> BackoffTable:
    """Per-replica estimate after ``backoffs`` steps and the first step whose estimate covers ``delay``."""
    fn = BACKOFF_FUNCTIONS[backoff]
    table = BackoffTable(backoffs, delay)
    for rid, est in enumerate(initial):
        table.rows.append(BackoffRow(rid, est, fn(backoffs) * est, first_sufficient(est, delay, fn),
                                     math.ceil(delay / est)))
    return table


# ------------------------------------------------------------------ text
def _fmt_kib(value: float) -> str:
    return f"{value:,.0f} B ({value / KIB:.1f} KiB)"


def format_table(rows: list[CostRow], n: int) -> str:
    header = ("protocol", "before exec", "total rounds", "messages", "per replica (max)", f"count at n={n}")
    body = [(r.protocol, str(r.rounds_before_exec), r.rounds_total_label, r.msgs_total, r.msgs_per_replica_max,
             str(r.exact_count if r.exact_count is not None else r.msgs_total_count)) for r in rows]
    widths = [max(len(line[i]) for line in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    for r in rows:
        if r.exact:
            extra = f"; {r.exact_with_recovery_count} with RecoveryCC" if r.exact_with_recovery_count else ""
            lines.append(f"{r.protocol} exact: {r.exact} = {r.exact_count} messages at n={n}, C=1{extra}")
    return "\n".join(lines)


def report(params: CostParams, include_throughput: bool = False) -> dict:
    std = primary_bandwidth(params)
    lin = primary_bandwidth(params, linear=True)
    out = {
        "n": params.n,
        "rows": [r.__dict__ for r in cost_table(params.n)],
        "primary_bandwidth": {"standard_bytes": std, "linear_bytes": lin, "reduction": 1 - lin / std},
    }
    if include_throughput:
        out["throughput"] = {"sequential": throughput(params), "out_of_order": throughput(params, True),
                             "unit_note": UNIT_NOTE}
    return out


def format_report(params: CostParams, include_throughput: bool = False) -> str:
    data = report(params, include_throughput)
    bw = data["primary_bandwidth"]
    lines = [format_table(cost_table(params.n), params.n), "",
             f"primary bandwidth per decision (n={params.n}, C={params.request_size} B, M={params.message_size} B):",
             f"  standard: {_fmt_kib(bw['standard_bytes'])}",
             f"  linear:   {_fmt_kib(bw['linear_bytes'])}",
             f"  reduction: {100 * bw['reduction']:.1f}%"]
    if include_throughput:
        tp = data["throughput"]
        lines += [f"throughput (delay={params.delay * 1000:g} ms):",
                  f"  sequential:   {tp['sequential']:.1f} decisions/s (below {math.ceil(tp['sequential'] * 10) / 10:g})",
                  f"  out-of-order: {tp['out_of_order']:.0f} decisions/s",
                  f"  note: {UNIT_NOTE}"]
    return "\n".join(lines)

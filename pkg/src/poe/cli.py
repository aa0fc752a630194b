"""Command-line entry point: run scenarios, seeded batches and the cost calculator."""
from __future__ import annotations

import argparse
import json
import re
import sys
from importlib import resources
from pathlib import Path

from . import costmodel
from .core.config import ConfigError
from .simulator import Scenario, ScenarioError, execution_latency, load, parse, run
from .simulator.soak import MODES, generate

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_PARSE = 2
EXIT_INTERNAL = 3
SOAK_PREFIX = "soak:"


def _bundled():
    return resources.files("poe") / "scenarios"


def bundled_names() -> list[str]:
    return sorted(p.name[:-5] for p in _bundled().iterdir() if p.name.endswith(".yaml"))


def resolve(ref: str) -> Scenario:
    """A scenario from a file path or the name of a bundled scenario."""
    path = Path(ref)
    if path.exists():
        return load(str(path))
    entry = _bundled() / f"{ref.removesuffix('.yaml')}.yaml"
    if entry.is_file():
        return parse(entry.read_text(encoding="utf-8"))
    raise ScenarioError(f"no scenario file {ref!r} and no bundled scenario of that name "
                        f"(bundled: {', '.join(bundled_names())})")


def _prepare(scenario: Scenario, args: argparse.Namespace) -> Scenario:
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return scenario.with_overrides(overrides) if overrides else scenario


def _summary(result) -> dict:
    return {
        "scenario": result.scenario.name,
        "seed": result.scenario.seed,
        "ok": result.report.ok,
        "checks": result.report.as_dict(),
        "metrics": result.metrics.as_dict(),
        "execution_latency": {str(k): v for k, v in execution_latency(result.trace).items()},
    }


def _print_summary(summary: dict, out) -> None:
    status = "PASS" if summary["ok"] else "FAIL"
    print(f"{summary['scenario']} (seed {summary['seed']}): {status}", file=out)
    for name, res in summary["checks"].items():
        state = "skipped" if res["skipped"] else ("ok" if res["ok"] else "VIOLATED")
        print(f"  check {name}: {state}", file=out)
        for v in res["violations"][:5]:
            where = "" if v["event_index"] is None else f" [event {v['event_index']}]"
            print(f"    {v['detail']}{where}", file=out)
    metrics = summary["metrics"]
    print(f"  view changes: {metrics['view_changes']}, decisions/s: {metrics['decisions_per_sec']:.1f}", file=out)
    for rnd, lat in summary["execution_latency"].items():
        print(f"  round {rnd}: executed {lat['delta_units']:g} delta after Propose (view {lat['view']})", file=out)
    for req, lat in metrics["latency_by_request"].items():
        print(f"  {req}: {lat['proof']} after {lat['time']:g} ({lat['delta_units']:g} delta)", file=out)


def cmd_run(args: argparse.Namespace) -> int:
    scenario = _prepare(resolve(args.scenario), args)
    if args.variant:
        names = [args.variant]
    else:
        names = sorted(scenario.variants) or [None]
    runs = [(name, run(scenario if name is None else scenario.variant(name))) for name in names]
    summaries = []
    for name, result in runs:
        summary = _summary(result)
        summaries.append(summary)
        _print_summary(summary, sys.stdout)
        if args.trace:
            target = Path(args.trace)
            if len(runs) > 1:
                target = target.with_name(f"{target.stem}.{name}{target.suffix}")
            target.write_text(result.trace.to_jsonl(), encoding="utf-8")
    report: dict = {"runs": summaries}
    ok = all(s["ok"] for s in summaries)
    if scenario.observe and len(runs) > 1:
        first = runs[0][1].trace
        same = {str(r): all(res.trace.projection(r) == first.projection(r) for _, res in runs[1:])
                for r in scenario.observe}
        report["projections_identical"] = same
        for r, equal in same.items():
            print(f"projection of r{r} across variants: {'identical' if equal else 'DIFFERENT'}")
        ok = ok and all(same.values())
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK if ok else EXIT_CHECK


def _seed_range(text: str) -> range:
    m = re.fullmatch(r"(\d+)\.\.(\d+)", text)
    if m is None:
        raise argparse.ArgumentTypeError("seed range must look like A..B (B exclusive)")
    lo, hi = int(m.group(1)), int(m.group(2))
    if hi <= lo:
        raise argparse.ArgumentTypeError("seed range is empty")
    return range(lo, hi)


def cmd_batch(args: argparse.Namespace) -> int:
    template = args.template
    if template.startswith(SOAK_PREFIX):
        mode = template[len(SOAK_PREFIX):]
        if mode not in MODES:
            raise ScenarioError(f"unknown soak mode {mode!r}; choose from {', '.join(MODES)}")
        make = lambda seed: generate(seed, mode)  # noqa: E731
    else:
        base = resolve(template)
        if args.override:
            base = base.with_overrides(args.override)
        make = lambda seed: base.with_overrides([f"seed={seed}"])  # noqa: E731
    failures: list[tuple[int, list[str]]] = []
    for seed in args.seeds:
        result = run(make(seed), measure_bytes=False)
        if not result.report.ok:
            failures.append((seed, sorted(n for n, r in result.report.results.items() if not r.ok)))
    total = len(args.seeds)
    print(f"{template}: {total - len(failures)}/{total} seeds passed")
    if failures:
        seed, checks = failures[0]
        print(f"first failing seed: {seed} ({', '.join(checks)}); replay with --seeds {seed}..{seed + 1}")
        return EXIT_CHECK
    return EXIT_OK


_SIZE = re.compile(r"^\s*([\d.]+)\s*(b|kb|kib|mb|mib)?\s*$", re.IGNORECASE)
_SIZE_UNITS = {None: 1, "b": 1, "kb": 1000, "kib": 1024, "mb": 10**6, "mib": 2**20}


def _size(text: str) -> int:
    m = _SIZE.match(text)
    if m is None:
        raise argparse.ArgumentTypeError(f"bad size {text!r}; use e.g. 256, 10KiB or 10kB")
    return int(float(m.group(1)) * _SIZE_UNITS[(m.group(2) or "").lower() or None])


def _duration(text: str) -> float:
    m = re.fullmatch(r"\s*([\d.]+)\s*(ms|s)?\s*", text)
    if m is None:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}; use e.g. 15ms or 0.015")
    value = float(m.group(1))
    return value / 1000 if m.group(2) == "ms" else value


def cmd_cost(args: argparse.Namespace) -> int:
    params = costmodel.CostParams(n=args.n, request_size=args.c, message_size=args.m, bandwidth=args.b,
                                  delay=args.delta)
    if args.json:
        print(json.dumps(costmodel.report(params, args.throughput), indent=2, sort_keys=True, default=str))
        return EXIT_OK
    text = costmodel.format_report(params, args.throughput)
    if args.linear:
        lin = costmodel.primary_bandwidth(params, linear=True)
        text += f"\nselected mode: linear, {lin / costmodel.KIB:.1f} KiB per decision at the primary"
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poe-sim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario file or bundled scenario")
    p.add_argument("scenario", help="path or bundled name, e.g. happy-path-n4")
    p.add_argument("--seed", type=int)
    p.add_argument("--trace", help="write the line-delimited trace here")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--override", action="append", metavar="KEY=VALUE", help="dotted key, e.g. system.window=4")
    p.add_argument("--variant", help="run one named variant instead of all")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run a template across a seed range")
    p.add_argument("template", help=f"scenario path, bundled name, or {SOAK_PREFIX}<mode> for randomized faults")
    p.add_argument("--seeds", type=_seed_range, required=True, help="A..B, B exclusive")
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("cost", help="print the cost comparison and worked examples")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--c", type=_size, default=10 * costmodel.KIB, help="request size, e.g. 10KiB")
    p.add_argument("--m", type=_size, default=256, help="small-message size")
    p.add_argument("--b", type=float, default=costmodel.GBIT_AS_BYTES, help="primary bandwidth in bytes/s")
    p.add_argument("--delta", type=_duration, default=0.015, help="message delay, e.g. 15ms")
    p.add_argument("--linear", action="store_true", help="highlight the linear primary bandwidth")
    p.add_argument("--throughput", action="store_true", help="include throughput estimates")
    p.add_argument("--json", action="store_true", help="structured output")
    p.set_defaults(func=cmd_cost)

    sub.add_parser("list", help="list bundled scenarios").set_defaults(
        func=lambda _: print("\n".join(bundled_names())) or EXIT_OK)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_PARSE
    try:
        return args.func(args)
    except (ScenarioError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

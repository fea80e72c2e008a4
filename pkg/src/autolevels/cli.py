"""Command-line entry point: run, lint, report, scenarios.

Exit codes: 0 ok, 1 lint or validation failure, 2 simulation fault.
Set ``AUTOLEVELS_LOG`` (e.g. ``DEBUG``) for log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

from .core_loops import loop_metrics
from .engine import LintFailure, load_scenario, run, shipped_scenarios
from .errors import AutolevelsError, ConfigError, SimulationFault, UsageError
from .taxonomy import lint_autonomy_coverage, load_model
from .trace import iter_rows, read_trace

EXIT_OK, EXIT_INVALID, EXIT_FAULT = 0, 1, 2


def summarize(trace) -> dict:
    """Per-run summary: loop metrics, message counts, state of charge range."""
    loops: dict[str, list] = {}
    for r in iter_rows(trace, "signal", "loop"):
        loops.setdefault(r.node, []).append(r.fields)
    metrics = {}
    for node, rows in sorted(loops.items()):
        m = loop_metrics(rows)
        metrics[node] = {"max_abs_error": m.max_abs_error, "settled_bound": m.settled_bound,
                         "settle_tick": m.settle_tick, "samples": len(rows)}
    counts: Counter = Counter()
    for r in iter_rows(trace, "message"):
        counts[f"{r.text('kind')}/{r.name}"] += 1
    socs = [r.num("soc") for r in iter_rows(trace, "signal", "battery")]
    out = {
        "header": trace.meta,
        "loops": metrics,
        "messages": dict(sorted(counts.items())),
        "violations": sum(v for k, v in counts.items() if k.endswith("/violation")),
        "transitions": sum(1 for _ in iter_rows(trace, "transition")),
    }
    if socs:
        out["soc_min"], out["soc_max"] = min(socs), max(socs)
    return out


def _cmd_run(args) -> int:
    sc = load_scenario(args.scenario, variant=args.variant)
    res = run(sc, seed=args.seed, ticks=args.ticks, bus_enabled=not args.no_bus,
              allow_lint_failures=args.allow_lint_failures)
    res.trace.write(args.out)
    print(f"{sc.name}: {len(res.trace.lines)} rows, {res.messages} delivered messages, "
          f"{res.violations} violations -> {args.out}")
    if args.summary:
        Path(args.summary).write_text(json.dumps(summarize(res.trace), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_lint(args) -> int:
    tree, _ = load_model(args.model)
    findings = lint_autonomy_coverage(tree)
    for f in findings:
        print(f)
    if findings:
        print(f"{len(findings)} finding(s)")
        return EXIT_INVALID
    print(f"{tree.name}: {len(tree)} nodes, no findings")
    return EXIT_OK


def _cmd_report(args) -> int:
    trace = read_trace(args.trace)
    summary = summarize(trace)
    meta = summary["header"]
    print(f"scenario {meta.get('scenario')} seed {meta.get('seed')} ticks {meta.get('ticks')}")
    for node, m in summary["loops"].items():
        print(f"  loop {node}: max|e_r|={m['max_abs_error']:.6g} settle_tick={m['settle_tick']}")
    for k, v in summary["messages"].items():
        print(f"  {k}: {v}")
    print(f"  transitions: {summary['transitions']}  violations: {summary['violations']}")
    if "soc_min" in summary:
        print(f"  soc range: [{summary['soc_min']:.6f}, {summary['soc_max']:.6f}]")
    if args.summary:
        Path(args.summary).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_scenarios(args) -> int:
    for name in shipped_scenarios():
        sc = load_scenario(name)
        first = " ".join(sc.description.split()).split(". ")[0].rstrip(".")
        print(f"{name:16s} {sc.ticks:6d} ticks  {first}.")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autolevels", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write its trace")
    r.add_argument("--scenario", required=True, help="scenario file or shipped scenario name")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--ticks", type=int, default=None, help="override the run length")
    r.add_argument("--out", required=True, help="trace output path")
    r.add_argument("--variant", default=None, help="scenario variant to apply")
    r.add_argument("--summary", default=None, help="also write a JSON summary here")
    r.add_argument("--allow-lint-failures", action="store_true")
    r.add_argument("--no-bus", action="store_true", help="disable the crosstalk bus")
    r.set_defaults(func=_cmd_run)

    lt = sub.add_parser("lint", help="check a model against the autonomy coverage rules")
    lt.add_argument("--model", required=True, help="model file or shipped model name")
    lt.set_defaults(func=_cmd_lint)

    rp = sub.add_parser("report", help="summarise a trace")
    rp.add_argument("--trace", required=True)
    rp.add_argument("--summary", default=None, help="write the summary as JSON")
    rp.set_defaults(func=_cmd_report)

    sc = sub.add_parser("scenarios", help="shipped scenarios")
    sc.add_argument("action", choices=["list"])
    sc.set_defaults(func=_cmd_scenarios)
    return p


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("AUTOLEVELS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LintFailure as exc:
        for f in exc.findings:
            print(f, file=sys.stderr)
        print("refusing to run: model fails lint (use --allow-lint-failures)", file=sys.stderr)
        return EXIT_INVALID
    except SimulationFault as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except (ConfigError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except AutolevelsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

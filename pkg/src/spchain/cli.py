"""Command-line entry point: ``run``, ``plan`` and ``compare``.

Exit codes: 0 clean, 2 safety violation detected, 3 configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .config import WorkloadConfig, load_config, reference_preset
from .consensus import ConsensusMode, LeaderMode
from .crossshard import BATCHED, PER_TX
from .experiments import AXES, compare_modes, run_scenario
from .metrics import MetricsReport, emit_report
from .planner import DEFAULT_THRESHOLD, format_table, parse_threshold, table_csv, size_table
from .types import ConfigError

EXIT_OK = 0
EXIT_UNSAFE = 2
EXIT_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    # usage mistakes are configuration errors, not safety violations
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spchain", description="Sharded blockchain simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="simulate one scenario")
    run.add_argument("--config", required=True, help="scenario JSON file")
    run.add_argument("--seed", type=int)
    run.add_argument("--slots", type=int)
    run.add_argument("--consensus", choices=[m.value for m in ConsensusMode])
    run.add_argument("--leader", choices=[m.value for m in LeaderMode])
    run.add_argument("--proofs", choices=[BATCHED, PER_TX])
    run.add_argument("--out", help="report path (.json or .csv)")
    run.add_argument("--trace", help="write the event log as NDJSON")

    plan = sub.add_parser("plan", help="shard-size security planning")
    plan.add_argument("--shards", type=int, nargs="*", help="shard counts (default: all presets)")
    plan.add_argument("--threshold", default="2^-20")
    plan.add_argument("--csv", action="store_true", help="emit CSV instead of a table")

    cmp = sub.add_parser("compare", help="run one scenario under each mode of an axis")
    cmp.add_argument("--axis", required=True, choices=sorted(AXES))
    cmp.add_argument("--config", help="scenario JSON file (default: 16-shard preset, saturated load)")
    cmp.add_argument("--seed", type=int)
    cmp.add_argument("--slots", type=int)
    cmp.add_argument("--out", help="write the comparison as JSON")
    return p


def _overrides(args: argparse.Namespace) -> dict:
    out: dict = {}
    if args.seed is not None:
        out["rng_seed"] = args.seed
    if getattr(args, "slots", None) is not None:
        out["slots"] = args.slots
    if getattr(args, "consensus", None):
        out["consensus"] = ConsensusMode(args.consensus)
    if getattr(args, "leader", None):
        out["leader"] = LeaderMode(args.leader)
    if getattr(args, "proofs", None):
        out["proofs"] = args.proofs
    return out


def _summary(report: MetricsReport) -> str:
    return (f"throughput {report.throughput_tps:.1f} tx/s, latency mean {report.latency.mean_s:.2f} s, "
            f"blocks {report.blocks_committed}, safety violations {report.safety_violations}, "
            f"atomicity {report.atomicity.completion_rate:.3f}")


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config).replace(**_overrides(args))
    if args.trace:
        with open(args.trace, "w") as trace:
            report = run_scenario(cfg, trace)
    else:
        report = run_scenario(cfg)
    if args.out:
        emit_report(report, args.out)
    print(_summary(report))
    return EXIT_UNSAFE if report.safety_violations else EXIT_OK


def _cmd_plan(args: argparse.Namespace) -> int:
    threshold = parse_threshold(args.threshold)
    if not 0 < threshold:
        raise ConfigError("threshold: must be positive")
    if args.shards is not None and any(m < 1 for m in args.shards):
        raise ConfigError("shards: must be >= 1")
    rows = size_table(args.shards or None, threshold, search=True)
    if args.csv:
        sys.stdout.write(table_csv(rows))
        return EXIT_OK
    print(format_table(rows))
    shown = args.threshold if threshold != DEFAULT_THRESHOLD else "2^-20"
    for r in rows:
        print(f"m={r.m}: smallest k with failure probability below {shown} is {r.min_k}")
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = reference_preset(16, slots=8, workload=WorkloadConfig(rate="saturated", accounts_per_shard=16384))
    if args.axis == "leader" and cfg.adversary.target_leader_p == 0:
        print("note: no target-leader attack configured; both leader modes see the same network", file=sys.stderr)
    cmp = compare_modes(cfg.replace(**_overrides(args)), args.axis)
    print(cmp.format_table())
    if args.out:
        Path(args.out).write_text(cmp.to_json())
    unsafe = any(r.safety_violations for r in cmp.reports.values())
    return EXIT_UNSAFE if unsafe else EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "plan": _cmd_plan, "compare": _cmd_compare}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

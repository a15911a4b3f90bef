"""Command-line entry point.

Subcommands: `run` one baseline, `sweep` several under one seed, `verify` the
property and oracle test suites, `replay` metrics from a saved episode file.
Exit codes: 0 success, 2 configuration error, 3 failed verification.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
from pathlib import Path

from .agent import BASELINES
from .harness import (METRICS_COLUMNS, ConfigError, MetricsTable, emit_outputs,
                      load_config, metrics_csv_text, print_progress,
                      replay_metrics, run_experiment, run_sweep)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="guapo",
        description="Peg-insertion experiments with an uncertainty-gated "
                    "model-based / learned policy switch.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate one baseline")
    run.add_argument("--config", default=None, help="sectioned key=value config file")
    run.add_argument("--baseline", default=None, choices=BASELINES)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--quiet", action="store_true")

    sweep = sub.add_parser("sweep", help="run several baselines under one seed")
    sweep.add_argument("--config", default=None)
    sweep.add_argument("--baselines", default="all",
                       help="'all' or comma-separated baseline names")
    sweep.add_argument("--seed", type=int, default=None)
    sweep.add_argument("--out", default=None)
    sweep.add_argument("--quiet", action="store_true")

    verify = sub.add_parser("verify", help="run the property/oracle test suites")
    verify.add_argument("--tests", default=None, help="test directory override")
    verify.add_argument("-k", default=None, help="pytest keyword filter")

    replay = sub.add_parser("replay", help="recompute metrics from episodes.jsonl")
    replay.add_argument("--episodes", required=True)
    replay.add_argument("--seed", type=int, default=None)
    return p


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "baseline", None) is not None:
        out["experiment.baseline"] = args.baseline
    if getattr(args, "seed", None) is not None:
        out["experiment.seed"] = args.seed
    return out


def _print_table(table: MetricsTable) -> None:
    widths = [18, 17, 18, 9, 13, 6]
    print("  ".join(c.ljust(w) for c, w in zip(METRICS_COLUMNS, widths)))
    for row in table.rows:
        print("  ".join(v.ljust(w) for v, w in zip(row.as_csv(), widths)))


def _cmd_run(args) -> int:
    config = load_config(args.config, _overrides(args))
    progress = None if args.quiet else print_progress
    table, logs = run_experiment(config, progress=progress)
    out = args.out or os.path.join("runs", f"{config.baseline}-s{config.seed}")
    paths = emit_outputs(table, logs, config, out)
    _print_table(table)
    if not args.quiet:
        print_progress(f"artifacts in {os.path.abspath(out)}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = load_config(args.config, _overrides(args))
    if args.baselines.strip().lower() == "all":
        names = list(BASELINES)
    else:
        names = [b.strip() for b in args.baselines.split(",") if b.strip()]
        unknown = [b for b in names if b not in BASELINES]
        if unknown:
            raise ConfigError(f"unknown baselines: {', '.join(unknown)}")
    progress = None if args.quiet else print_progress
    out = args.out or os.path.join("runs", f"sweep-s{config.seed}")
    table = run_sweep(config, names, out, progress=progress)
    _print_table(table)
    if not args.quiet:
        print_progress(f"artifacts in {os.path.abspath(out)}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    tests = args.tests
    if tests is None:
        for cand in (Path(__file__).resolve().parents[2] / "tests",
                     Path.cwd() / "tests"):
            if cand.is_dir():
                tests = str(cand)
                break
    if tests is None:
        print("verify: no tests directory found", file=sys.stderr)
        return EXIT_VERIFY
    cmd = [sys.executable, "-m", "pytest", tests, "-q"]
    if args.k:
        cmd += ["-k", args.k]
    result = subprocess.run(cmd)
    return EXIT_OK if result.returncode == 0 else EXIT_VERIFY


def _cmd_replay(args) -> int:
    table = replay_metrics(args.episodes, seed=args.seed)
    _print_table(table)
    sibling = os.path.join(os.path.dirname(os.path.abspath(args.episodes)),
                           "metrics.csv")
    if os.path.exists(sibling):
        with open(sibling) as f:
            if f.read() != metrics_csv_text(table.rows):
                print("replay: recomputed metrics DIFFER from metrics.csv",
                      file=sys.stderr)
                return EXIT_VERIFY
        print_progress("replay: recomputed metrics match metrics.csv")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep,
                "verify": _cmd_verify, "replay": _cmd_replay}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

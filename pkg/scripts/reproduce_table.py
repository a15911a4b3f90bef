#!/usr/bin/env python3
"""Reproduce the baseline comparison table with default settings.

Runs every baseline under one master seed (GUAPO_SEED or --seed, default 0)
and prints the metrics table; artifacts land in --out.  Equivalent to
`guapo sweep --baselines all`, kept as a script so the experiment is one
command from a fresh checkout.
"""
import argparse
import os
import sys
import time

from guapo.cli import _print_table
from guapo.harness import load_config, print_progress, run_sweep
from guapo.agent import BASELINES


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default="runs/table")
    ap.add_argument("--config", default=None)
    args = ap.parse_args()

    overrides = {}
    if args.seed is not None:
        overrides["experiment.seed"] = args.seed
    config = load_config(args.config, overrides)

    t0 = time.perf_counter()
    table = run_sweep(config, BASELINES, args.out, progress=print_progress)
    minutes = (time.perf_counter() - t0) / 60.0

    _print_table(table)
    print(f"\ntotal runtime: {minutes:.1f} min; artifacts in {os.path.abspath(args.out)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Monte Carlo report on the perception pipeline.

Samples fresh episodes, runs the full heatmap-to-region pipeline, and prints
the hole-estimate error distribution plus the probability that the true hole
lies inside the region for inflation factors k in {0, 1, 2}.
"""
import argparse
import sys
import time

import numpy as np

from guapo.geometry import Pose
from guapo.perception import PerceptionConfig, run_perception


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = PerceptionConfig()
    errs, stds = [], []
    t0 = time.perf_counter()
    for ep in range(args.episodes):
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=args.seed, spawn_key=(ep,)))
        bx, by = rng.uniform(-0.1, 0.1, 2)
        box = Pose(np.array([1.0, 0, 0, 0]),
                   np.array([bx, by, -cfg.cuboid_half_extents[2]]))
        true_hole = box.transform(np.array(cfg.hole_offset))
        products = run_perception(box, cfg, rng)
        errs.append(products.estimate.mean - true_hole)
        stds.append(products.estimate.std)
    errs = np.array(errs)
    stds = np.array(stds)
    elapsed = time.perf_counter() - t0

    print(f"{args.episodes} episodes, {elapsed / args.episodes * 1000:.0f} ms each")
    print("abs estimate error per axis, mm:")
    for q in (50, 90):
        print(f"  p{q}: {np.round(np.percentile(np.abs(errs), q, axis=0) * 1000, 1)}")
    print("hypothesis spread (std) per axis, mm:")
    print(f"  p50: {np.round(np.percentile(stds, 50, axis=0) * 1000, 1)}")
    template = np.array(cfg.template_half_extents)
    for k in (0, 1, 2):
        half = template + k * stds
        cov = np.mean(np.all(np.abs(errs) <= half, axis=1))
        print(f"coverage (true hole in region), k={k}: {cov:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

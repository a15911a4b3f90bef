"""Model-based policies: clipped attractors, box barriers, scripted insertion.

The scripted insertion policy drives the peg toward a believed opening and
presses down; once the peg is engaged below the surface it pushes straight in.
Randomized variants perturb it two ways: per-step action noise, and a lateral
target offset redrawn every fixed number of steps (position-level dithering at
the scale of the perception error).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .regions import Region

RAND_MODES = ("none", "step", "target", "both")


def attractor_action(ee, target, gain: float, max_step: float) -> np.ndarray:
    """Proportional pull toward target, clipped per axis to the step bound."""
    ee = np.asarray(ee, dtype=float)
    target = np.asarray(target, dtype=float)
    return np.clip(gain * (target - ee), -max_step, max_step)


def barrier_action(ee, obstacle: Region, strength: float, influence_dist: float,
                   max_step: float) -> np.ndarray:
    """Repulsion from an axis-aligned box, fading linearly to zero at the
    influence distance.  Direction is the outward normal of the nearest face,
    rounded at edges and corners (gradient of the point-to-box distance)."""
    if influence_dist <= 0:
        raise ValueError("influence distance must be positive")
    p = np.asarray(ee, dtype=float)
    nearest = np.clip(p, obstacle.center - obstacle.half_extents,
                      obstacle.center + obstacle.half_extents)
    offset = p - nearest
    d = float(np.linalg.norm(offset))
    if d >= influence_dist:
        return np.zeros(3)
    if d > 1e-12:
        direction = offset / d
    else:
        # on (or inside) the box: push out along the least-buried axis
        rel = p - obstacle.center
        slack = obstacle.half_extents - np.abs(rel)
        axis = int(np.argmin(slack))
        direction = np.zeros(3)
        direction[axis] = 1.0 if rel[axis] >= 0 else -1.0
    magnitude = strength * (1.0 - d / influence_dist)
    return np.clip(magnitude * direction, -max_step, max_step)


def randomized(action, sigma, rng, max_step: float) -> np.ndarray:
    """Add diagonal Gaussian noise to an action, then clip to the step bound."""
    a = np.asarray(action, dtype=float) + rng.normal(0.0, sigma, size=3)
    return np.clip(a, -max_step, max_step)


@dataclass
class ScriptedConfig:
    gain: float = 1.0
    press_margin: float = 0.002
    rand_mode: str = "none"
    step_sigma: float = 0.005
    target_sigma: float = 0.0275
    target_period: int = 50

    def __post_init__(self):
        if self.rand_mode not in RAND_MODES:
            raise ValueError(f"rand_mode must be one of {RAND_MODES}")


class ScriptedInsertPolicy:
    """Attract to a believed opening, press, and push straight in once engaged.

    The surface height is treated as known (calibrated workspace); only the
    opening's lateral position comes from the belief.  Randomized variants need
    an rng; the deterministic ones do not.
    """

    def __init__(self, config: ScriptedConfig, believed_hole, surface_height: float,
                 goal_depth: float, max_step: float, rng=None):
        self.config = config
        self.believed_xy = np.asarray(believed_hole, dtype=float)[:2].copy()
        self.surface = float(surface_height)
        self.press_z = self.surface - goal_depth - config.press_margin
        self.max_step = float(max_step)
        self.rng = rng
        if config.rand_mode != "none" and rng is None:
            raise ValueError("randomized modes need an rng")
        self._offset = np.zeros(2)

    def act(self, ee, t: int) -> np.ndarray:
        ee = np.asarray(ee, dtype=float)
        if ee[2] < self.surface - 1e-9:
            # engaged in the opening: push straight in
            return np.array([0.0, 0.0, -self.max_step])
        c = self.config
        if c.rand_mode in ("target", "both") and t % c.target_period == 0:
            self._offset = self.rng.normal(0.0, c.target_sigma, size=2)
        target = np.array([self.believed_xy[0] + self._offset[0],
                           self.believed_xy[1] + self._offset[1],
                           self.press_z])
        a = attractor_action(ee, target, c.gain, self.max_step)
        if c.rand_mode in ("step", "both"):
            a = randomized(a, c.step_sigma, self.rng, self.max_step)
        return a

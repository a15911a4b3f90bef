"""Axis-aligned uncertainty regions and the hard policy switch built on them.

The region estimate is the state set where the goal location is not trusted;
inside it the learned policy acts, outside it the model-based attractor does.
Membership of a point in a weighted collection of candidate regions is scored
by summing the weights of the regions that contain it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WEIGHT_SUM_TOL = 1e-9


@dataclass
class Region:
    """Closed axis-aligned box: |p - center| <= half_extents per axis."""

    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
        if np.any(self.half_extents < 0):
            raise ValueError("half extents must be nonnegative")


def contains(region: Region, point) -> bool:
    """Closed-boundary membership test."""
    p = np.asarray(point, dtype=float).reshape(3)
    return bool(np.all(np.abs(p - region.center) <= region.half_extents))


@dataclass
class NonparametricRegionSet:
    """Weighted candidate regions; weights must sum to 1 within 1e-9."""

    regions: list
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.regions) != self.weights.size:
            raise ValueError("one weight per region required")
        if self.weights.size == 0:
            raise ValueError("empty region set")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        total = float(self.weights.sum())
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {total}, expected 1")


def membership_likelihood(region_set: NonparametricRegionSet, point) -> float:
    """Sum of the weights of the candidate regions containing the point.

    Equals the total probability mass of hypotheses under which the point is
    inside the uncertain set; 0 and 1 are attained when no / all regions
    contain it.
    """
    p = np.asarray(point, dtype=float).reshape(3)
    total = 0.0
    for region, w in zip(region_set.regions, region_set.weights):
        if np.all(np.abs(p - region.center) <= region.half_extents):
            total += float(w)
    return total


def switch_indicator(point, region: Region) -> int:
    """1 inside the uncertainty region (learned policy acts), else 0."""
    return 1 if contains(region, point) else 0


def shrink_on_success(success_state, template_half_extents, opening_height: float) -> Region:
    """Collapse the region to the template centered at the discovered opening.

    The lateral center comes from the end-effector position at the successful
    insertion; the vertical center is the known opening height (the success
    state itself sits at the bottom of the hole).
    """
    s = np.asarray(success_state, dtype=float).reshape(3)
    center = np.array([s[0], s[1], float(opening_height)])
    return Region(center, np.asarray(template_half_extents, dtype=float))

"""Kinematic desk-scale peg-in-hole environment.

The end-effector is a square peg moved by bounded per-axis position steps at a
fixed control rate.  The world is a flat box surface with one square opening;
motion is quasi-static: pressing into the surface off the opening clamps z and
slides (frictionless), a peg engaged in the opening is laterally confined by
the walls and bottoms out at the goal depth.  Success is insertion to the goal
depth.  There are no forces, only clamped kinematics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose
from .regions import Region, contains

REWARD_STEP = "step_penalty"       # -1 per step, 0 at success
REWARD_SHAPED = "shaped_distance"  # -|ee - goal estimate| outside the region, 0 inside, +1 at success

_START_MARGIN = 0.02   # keep starts this far inside the workspace bounds
_START_MIN_HEIGHT = 0.05


@dataclass
class EnvConfig:
    workspace_half_extents: tuple = (0.5, 0.5, 0.4)
    surface_height: float = 0.0
    hole_half_width: float = 0.015
    peg_half_width: float = 0.013
    goal_depth: float = 0.02
    max_step: float = 0.005
    horizon: int = 1000
    start_distance: float = 0.75
    start_distance_tol: float = 0.01
    start_elevation_range: tuple = (0.25, 0.50)  # radians above the surface plane
    control_period: float = 0.05
    box_lateral_range: float = 0.10
    box_half_height: float = 0.045
    hole_offset: tuple = (0.02, -0.015)   # lateral offset of the opening from the box center
    su_half_extents: tuple = (0.022, 0.022, 0.022)  # true uncertain-region template
    patch_size: int = 16
    patch_cell: float = 0.004
    sensing_radius: float = 0.06
    patch_flip_noise: float = 0.0

    def __post_init__(self):
        if self.peg_half_width >= self.hole_half_width:
            raise ValueError("peg must be narrower than the hole")
        if self.goal_depth <= 0 or self.max_step <= 0 or self.horizon <= 0:
            raise ValueError("goal depth, max step and horizon must be positive")


@dataclass
class EnvState:
    ee: np.ndarray
    ee_vel: np.ndarray
    box_pose: Pose
    inserted_depth: float
    t: int
    contact: bool


@dataclass
class StepResult:
    state: EnvState
    reward: float
    done: bool
    success: bool
    entered_su: bool
    entered_shat: bool


class PegInsertionEnv:
    """Holds static geometry; episode state flows through reset/step explicitly."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.hole_xy = np.zeros(2)          # set at reset from the box pose
        self.reward_convention = REWARD_STEP
        self.goal_estimate = None           # 3-vector for the shaped reward
        self.uncertain_region = None        # Region for switch tagging / shaped reward
        k = config.patch_size
        offs = (np.arange(k) - (k - 1) / 2.0) * config.patch_cell
        self._patch_dx = offs[None, :].repeat(k, axis=0)    # columns: x offset
        self._patch_dy = offs[:, None].repeat(k, axis=1)    # rows: y offset
        self._patch_r2 = self._patch_dx ** 2 + self._patch_dy ** 2

    # -- episode wiring ----------------------------------------------------

    def set_reward(self, convention: str, goal_estimate=None, region: Region = None):
        if convention not in (REWARD_STEP, REWARD_SHAPED):
            raise ValueError(f"unknown reward convention {convention!r}")
        if convention == REWARD_SHAPED and goal_estimate is None:
            raise ValueError("shaped reward needs a goal estimate")
        self.reward_convention = convention
        self.goal_estimate = None if goal_estimate is None else np.asarray(goal_estimate, dtype=float)
        self.uncertain_region = region

    def set_uncertain_region(self, region: Region):
        self.uncertain_region = region

    # -- geometry helpers --------------------------------------------------

    @property
    def surface(self) -> float:
        return self.config.surface_height

    def hole_position(self) -> np.ndarray:
        """Opening center on the surface plane, world frame."""
        return np.array([self.hole_xy[0], self.hole_xy[1], self.surface])

    def true_region(self) -> Region:
        return Region(self.hole_position(), np.asarray(self.config.su_half_extents))

    def footprint_inside(self, xy) -> bool:
        # tolerance absorbs rounding from clamping to the clearance box bounds
        clearance = self.config.hole_half_width - self.config.peg_half_width
        return bool(np.all(np.abs(np.asarray(xy) - self.hole_xy) <= clearance + 1e-12))

    def in_goal(self, state: EnvState) -> bool:
        return state.inserted_depth >= self.config.goal_depth - 1e-12

    # -- reset -------------------------------------------------------------

    def sample_box_position(self, rng) -> np.ndarray:
        c = self.config
        bx, by = rng.uniform(-c.box_lateral_range, c.box_lateral_range, size=2)
        return np.array([bx, by, c.surface_height - c.box_half_height])

    def reset(self, rng, box_position=None) -> EnvState:
        c = self.config
        if box_position is None:
            box_position = self.sample_box_position(rng)
        box_pose = Pose.identity()
        box_pose = Pose(box_pose.quaternion, np.asarray(box_position, dtype=float))
        self.hole_xy = box_pose.translation[:2] + np.asarray(c.hole_offset)

        hole = self.hole_position()
        start = None
        for _ in range(1000):
            az = rng.uniform(0.0, 2.0 * np.pi)
            el = rng.uniform(*c.start_elevation_range)
            cand = hole + c.start_distance * np.array([
                np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
            if self._start_ok(cand):
                start = cand
                break
        if start is None:
            # aim inward toward the workspace center; feasible for any box pose
            az = np.arctan2(-hole[1], -hole[0]) if np.any(hole[:2]) else np.pi / 4
            el = float(np.mean(c.start_elevation_range))
            start = hole + c.start_distance * np.array([
                np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        return EnvState(ee=start, ee_vel=np.zeros(3), box_pose=box_pose,
                        inserted_depth=0.0, t=0, contact=False)

    def _start_ok(self, p) -> bool:
        w = np.asarray(self.config.workspace_half_extents)
        return (np.all(np.abs(p) <= w - _START_MARGIN)
                and p[2] >= self.surface + _START_MIN_HEIGHT)

    # -- dynamics ----------------------------------------------------------

    def step(self, state: EnvState, action) -> StepResult:
        c = self.config
        a = np.clip(np.asarray(action, dtype=float).reshape(3), -c.max_step, c.max_step)
        w = np.asarray(c.workspace_half_extents)
        cand = np.clip(state.ee + a, -w, w)
        contact = False
        surf = self.surface
        clearance = c.hole_half_width - c.peg_half_width
        floor = surf - c.goal_depth

        engaged = state.ee[2] < surf - 1e-12
        if engaged:
            # walls confine the peg laterally while it is in the opening
            lo = self.hole_xy - clearance
            hi = self.hole_xy + clearance
            clamped = np.clip(cand[:2], lo, hi)
            if not np.array_equal(clamped, cand[:2]):
                contact = True
            cand[:2] = clamped
            if cand[2] < floor:
                cand[2] = floor
                contact = True
        elif cand[2] < surf:
            if self.footprint_inside(cand[:2]):
                if cand[2] < floor:
                    cand[2] = floor
                    contact = True
            else:
                cand[2] = surf
                contact = True

        assert cand[2] >= surf - 1e-12 or self.footprint_inside(cand[:2]), \
            "peg penetrated the box surface"

        depth = float(max(0.0, surf - cand[2]))
        success = bool(depth >= c.goal_depth - 1e-12)
        vel = (cand - state.ee) / c.control_period
        new_state = EnvState(ee=cand, ee_vel=vel, box_pose=state.box_pose,
                             inserted_depth=depth, t=state.t + 1, contact=contact)
        done = success or new_state.t >= c.horizon
        reward = self._reward(new_state, success)
        entered_su = contains(self.true_region(), cand)
        entered_shat = (self.uncertain_region is not None
                        and contains(self.uncertain_region, cand))
        return StepResult(state=new_state, reward=reward, done=done, success=success,
                          entered_su=entered_su, entered_shat=entered_shat)

    def _reward(self, state: EnvState, success: bool) -> float:
        if self.reward_convention == REWARD_STEP:
            return 0.0 if success else -1.0
        if success:
            return 1.0
        if self.uncertain_region is not None and contains(self.uncertain_region, state.ee):
            return 0.0
        return -float(np.linalg.norm(state.ee - self.goal_estimate))

    # -- observation -------------------------------------------------------

    def local_observation(self, state: EnvState, rng=None) -> np.ndarray:
        """Occupancy patch around the ee plus (vel, contact, height): K*K + 5 floats.

        The patch samples the surface plane on a K x K grid anchored to the ee
        (cell centers at ee + offset), so shifting the ee by exactly one cell
        shifts the pattern by one cell.  Cell values: 1 opening, 0 surface,
        -1 where the cell center is farther than the sensing radius from the
        ee in 3D; away from the surface the whole patch reads -1, so distant
        states carry no goal direction.
        """
        c = self.config
        px = state.ee[0] + self._patch_dx
        py = state.ee[1] + self._patch_dy
        h = state.ee[2] - self.surface
        far = self._patch_r2 + h * h > c.sensing_radius ** 2
        inside = ((np.abs(px - self.hole_xy[0]) <= c.hole_half_width)
                  & (np.abs(py - self.hole_xy[1]) <= c.hole_half_width))
        patch = np.zeros((c.patch_size, c.patch_size), dtype=np.float32)
        patch[inside] = 1.0
        if c.patch_flip_noise > 0 and rng is not None:
            flips = rng.random(patch.shape) < c.patch_flip_noise
            flips &= ~far
            patch[flips] = 1.0 - patch[flips]
        patch[far] = -1.0
        obs = np.empty(c.patch_size * c.patch_size + 5, dtype=np.float32)
        obs[:c.patch_size * c.patch_size] = patch.ravel()
        obs[-5:-2] = state.ee_vel
        obs[-2] = 1.0 if state.contact else 0.0
        obs[-1] = state.ee[2] - self.surface
        return obs

    def observation_dim(self) -> int:
        return self.config.patch_size * self.config.patch_size + 5

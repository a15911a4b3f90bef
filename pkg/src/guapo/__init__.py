"""Desk-scale peg insertion: perception-driven uncertainty regions, a
model-based attractor outside them, a from-scratch soft actor-critic inside,
and the experiment harness comparing the hybrid against its baselines."""

from .agent import BASELINES, EpisodeLog, GuapoActor, make_actor, run_episode
from .env import EnvConfig, PegInsertionEnv
from .geometry import CameraIntrinsics, Cuboid, Pose
from .harness import ExperimentConfig, load_config, run_experiment, run_sweep
from .perception import PerceptionConfig, run_perception
from .regions import (NonparametricRegionSet, Region, contains,
                      membership_likelihood, switch_indicator)
from .sac import SACHyper, SACLearner

__all__ = [
    "BASELINES", "EpisodeLog", "GuapoActor", "make_actor", "run_episode",
    "CameraIntrinsics", "Cuboid", "Pose",
    "Region", "NonparametricRegionSet", "contains", "membership_likelihood",
    "switch_indicator",
    "EnvConfig", "PegInsertionEnv",
    "PerceptionConfig", "run_perception",
    "SACHyper", "SACLearner",
    "ExperimentConfig", "load_config", "run_experiment", "run_sweep",
]

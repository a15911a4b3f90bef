"""Episode composition: baseline actors, the hard-switch agent, and episode logging.

Every actor follows the same per-episode protocol driven by `run_episode`:
`begin_episode` rebuilds beliefs (perception, reward wiring) after the env
reset, `act` maps the current state to an action and a source tag, `feedback`
lets learning actors store transitions and take gradient steps, and
`end_episode` handles terminal bookkeeping such as region shrinking.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .env import REWARD_SHAPED, REWARD_STEP, PegInsertionEnv
from .mb import ScriptedConfig, ScriptedInsertPolicy, attractor_action
from .perception import PerceptionConfig, run_perception
from .regions import Region, shrink_on_success, switch_indicator
from .sac import SACLearner

SOURCE_MB = "M"
SOURCE_RL = "R"

BASELINES = ("mb-perfect", "mb-dope", "mb-rand-perfect", "mb-rand-dope",
             "sac", "residual", "guapo")


@dataclass
class EpisodeLog:
    """One episode's full record; one JSON object per line on disk.

    Per-step arrays are parallel: entry t holds the action taken at step t,
    the end-effector position after it, and the flags of that post-step state.
    `alpha` is the switch value at decision time (1 = learned policy active).
    """

    baseline: str
    phase: str
    iteration: int
    episode: int
    success: bool
    steps: int
    steps_to_success: int | None
    entered_su: bool
    entered_shat: bool
    box_position: list
    true_hole: list
    shat_center: list | None
    shat_half: list | None
    start_ee: list
    ee: list = field(default_factory=list)
    action: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    source: str = ""
    alpha: str = ""
    in_su: str = ""
    in_shat: str = ""

    def to_json(self) -> str:
        d = dict(self.__dict__)
        d["steps_to_success"] = self.steps_to_success
        return json.dumps(d, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "EpisodeLog":
        return cls(**json.loads(line))


def _round_vec(v, nd=9):
    return [round(float(x), nd) for x in v]


class ScriptedActor:
    """Pure model-based insertion, optionally through the perception pipeline.

    With `perception` None the believed opening is the true one (the Perfect
    variants); otherwise each episode runs perception and aims at the estimate.
    Randomization comes from the scripted config's mode.
    """

    needs_obs = False
    trains = False

    def __init__(self, scripted: ScriptedConfig, perception: PerceptionConfig | None = None):
        self.scripted = scripted
        self.perception = perception
        self.region: Region | None = None
        self.policy: ScriptedInsertPolicy | None = None

    def begin_episode(self, env: PegInsertionEnv, state, rng) -> None:
        if self.perception is None:
            believed = env.hole_position()
            self.region = env.true_region()
        else:
            products = run_perception(state.box_pose, self.perception, rng)
            believed = products.estimate.mean
            self.region = products.region
        env.set_reward(REWARD_STEP)
        env.set_uncertain_region(self.region)
        self.policy = ScriptedInsertPolicy(
            self.scripted, believed, env.surface, env.config.goal_depth,
            env.config.max_step, rng=rng)

    def act(self, env, state, obs, rng):
        self.policy.rng = rng
        return self.policy.act(state.ee, state.t), SOURCE_MB

    def feedback(self, env, obs, action, reward, next_obs, done, rng, train):
        pass

    def end_episode(self, env, state, success) -> None:
        pass


class SACActor:
    """Plain soft actor-critic end to end; the distance-shaped reward aims at
    the perception estimate, zeroes inside the uncertain region."""

    needs_obs = True
    trains = True

    def __init__(self, learner: SACLearner, perception: PerceptionConfig):
        self.learner = learner
        self.perception = perception
        self.region: Region | None = None

    def begin_episode(self, env, state, rng) -> None:
        products = run_perception(state.box_pose, self.perception, rng)
        self.region = products.region
        env.set_reward(REWARD_SHAPED, goal_estimate=products.estimate.mean,
                       region=self.region)

    def act(self, env, state, obs, rng):
        return self.learner.act(obs, rng), SOURCE_RL

    def feedback(self, env, obs, action, reward, next_obs, done, rng, train):
        if not train:
            return
        self.learner.buffer.push(obs, action, next_obs, reward, done)
        if len(self.learner.buffer) >= self.learner.hyper.warmup:
            for _ in range(self.learner.hyper.gradient_steps):
                self.learner.update(rng)

    def end_episode(self, env, state, success) -> None:
        pass


class ResidualActor(SACActor):
    """Attractor toward the estimated opening plus a learned additive action.

    The executed command is clip(mb + rl, per-axis step bound); the replay
    buffer stores the learner's own component, treating the attractor as part
    of the environment dynamics.
    """

    def __init__(self, learner: SACLearner, perception: PerceptionConfig,
                 gain: float = 1.0):
        super().__init__(learner, perception)
        self.gain = gain
        self.target: np.ndarray | None = None
        self._last_rl = np.zeros(learner.act_dim)

    def begin_episode(self, env, state, rng) -> None:
        products = run_perception(state.box_pose, self.perception, rng)
        self.region = products.region
        self.target = products.estimate.mean
        env.set_reward(REWARD_SHAPED, goal_estimate=self.target, region=self.region)

    def act(self, env, state, obs, rng):
        mb = attractor_action(state.ee, self.target, self.gain, env.config.max_step)
        self._last_rl = self.learner.act(obs, rng)
        combined = np.clip(mb + self._last_rl, -env.config.max_step, env.config.max_step)
        return combined, SOURCE_RL

    def feedback(self, env, obs, action, reward, next_obs, done, rng, train):
        super().feedback(env, obs, self._last_rl, reward, next_obs, done, rng, train)


class GuapoActor:
    """Hard switch: model-based funneling outside the uncertain region, the
    learned policy inside it, with shrink-on-success localization.

    Perception is rerun at each episode start until a success pins the opening;
    from then on the region is the no-uncertainty template at the discovered
    position and perception is skipped.  All transitions go to the replay
    buffer regardless of which policy produced them.
    """

    needs_obs = True
    trains = True

    def __init__(self, learner: SACLearner, perception: PerceptionConfig,
                 gain: float = 1.0):
        self.learner = learner
        self.perception = perception
        self.gain = gain
        self.goal_localized = False
        self.shat: Region | None = None

    @property
    def region(self):
        return self.shat

    def begin_episode(self, env, state, rng) -> None:
        if not self.goal_localized:
            products = run_perception(state.box_pose, self.perception, rng)
            self.shat = products.region
        env.set_reward(REWARD_STEP)
        env.set_uncertain_region(self.shat)

    def act(self, env, state, obs, rng):
        if switch_indicator(state.ee, self.shat) == 1:
            return self.learner.act(obs, rng), SOURCE_RL
        return attractor_action(state.ee, self.shat.center, self.gain,
                                env.config.max_step), SOURCE_MB

    def feedback(self, env, obs, action, reward, next_obs, done, rng, train):
        if not train:
            return
        self.learner.buffer.push(obs, action, next_obs, reward, done)
        if len(self.learner.buffer) >= self.learner.hyper.warmup:
            for _ in range(self.learner.hyper.gradient_steps):
                self.learner.update(rng)

    def end_episode(self, env, state, success) -> None:
        if success:
            self.shat = shrink_on_success(state.ee, env.config.su_half_extents,
                                          env.surface)
            self.goal_localized = True


def make_actor(baseline: str, env_config, perception: PerceptionConfig,
               learner: SACLearner | None, scripted: ScriptedConfig | None = None):
    """Instantiate the actor for a named baseline."""
    if baseline not in BASELINES:
        raise ValueError(f"unknown baseline {baseline!r}; expected one of {BASELINES}")
    scripted = scripted or ScriptedConfig()
    if baseline == "mb-perfect":
        return ScriptedActor(ScriptedConfig(**{**scripted.__dict__, "rand_mode": "none"}))
    if baseline == "mb-dope":
        return ScriptedActor(ScriptedConfig(**{**scripted.__dict__, "rand_mode": "none"}),
                             perception)
    if baseline == "mb-rand-perfect":
        return ScriptedActor(ScriptedConfig(**{**scripted.__dict__, "rand_mode": "both"}))
    if baseline == "mb-rand-dope":
        return ScriptedActor(ScriptedConfig(**{**scripted.__dict__, "rand_mode": "both"}),
                             perception)
    if learner is None:
        raise ValueError(f"baseline {baseline!r} needs a learner")
    if baseline == "sac":
        return SACActor(learner, perception)
    if baseline == "residual":
        return ResidualActor(learner, perception)
    return GuapoActor(learner, perception)


def run_episode(env: PegInsertionEnv, actor, *, box_position, rng_env,
                rng_perception, rng_act, rng_update, train: bool,
                baseline: str = "", phase: str = "train", iteration: int = 0,
                episode: int = 0) -> EpisodeLog:
    """Reset, roll one episode under the actor, and return its full log."""
    state = env.reset(rng_env, box_position=box_position)
    actor.begin_episode(env, state, rng_perception)
    region = actor.region

    log = EpisodeLog(
        baseline=baseline, phase=phase, iteration=iteration, episode=episode,
        success=False, steps=0, steps_to_success=None,
        entered_su=False, entered_shat=False,
        box_position=_round_vec(state.box_pose.translation),
        true_hole=_round_vec(env.hole_position()),
        shat_center=None if region is None else _round_vec(region.center),
        shat_half=None if region is None else _round_vec(region.half_extents),
        start_ee=_round_vec(state.ee))
    source_chars, alpha_chars, in_su_chars, in_shat_chars = [], [], [], []

    obs = env.local_observation(state) if actor.needs_obs else None
    for _ in range(env.config.horizon):
        action, source = actor.act(env, state, obs, rng_act)
        alpha = 1 if source == SOURCE_RL else 0
        result = env.step(state, action)
        next_obs = env.local_observation(result.state) if actor.needs_obs else None
        actor.feedback(env, obs, action, result.reward, next_obs,
                       result.success, rng_update, train)

        log.ee.append(_round_vec(result.state.ee))
        log.action.append(_round_vec(action, 7))
        log.reward.append(round(float(result.reward), 6))
        source_chars.append(source)
        alpha_chars.append("1" if alpha else "0")
        in_su_chars.append("1" if result.entered_su else "0")
        in_shat_chars.append("1" if result.entered_shat else "0")
        log.entered_su = log.entered_su or result.entered_su
        log.entered_shat = log.entered_shat or result.entered_shat

        state = result.state
        obs = next_obs
        if result.done:
            log.success = result.success
            break
    log.steps = len(log.ee)
    if log.success:
        log.steps_to_success = log.steps
    log.source = "".join(source_chars)
    log.alpha = "".join(alpha_chars)
    log.in_su = "".join(in_su_chars)
    log.in_shat = "".join(in_shat_chars)
    actor.end_episode(env, state, log.success)
    return log

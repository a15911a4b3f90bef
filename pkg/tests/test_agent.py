"""Actor composition tests: the hard switch, residual additivity, episode logging."""
import numpy as np
import pytest

from guapo.agent import (BASELINES, SOURCE_MB, SOURCE_RL, EpisodeLog,
                         GuapoActor, ResidualActor, SACActor, ScriptedActor,
                         make_actor, run_episode)
from guapo.env import REWARD_SHAPED, REWARD_STEP, EnvConfig, PegInsertionEnv
from guapo.mb import ScriptedConfig, attractor_action
from guapo.perception import PerceptionConfig
from guapo.regions import Region, contains
from guapo.sac import SACHyper, SACLearner


def small_learner(env, seed=0, warmup=50, batch=32):
    hyper = SACHyper(hidden=(16, 16), batch_size=batch, warmup=warmup,
                     buffer_capacity=5000)
    return SACLearner(env.observation_dim(), 3, env.config.max_step,
                      hyper=hyper, rng=np.random.default_rng(seed))


def rngs(seed=0):
    root = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in root.spawn(4)]


def run_one(env, actor, seed=0, train=True, **kw):
    r_env, r_per, r_act, r_upd = rngs(seed)
    box = env.sample_box_position(np.random.default_rng(seed + 500))
    return run_episode(env, actor, box_position=box, rng_env=r_env,
                       rng_perception=r_per, rng_act=r_act, rng_update=r_upd,
                       train=train, baseline="test", **kw)


def test_make_actor_covers_all_baselines():
    env = PegInsertionEnv(EnvConfig())
    learner = small_learner(env)
    for name in BASELINES:
        actor = make_actor(name, env.config, PerceptionConfig(), learner)
        assert actor is not None
    with pytest.raises(ValueError):
        make_actor("q-table", env.config, PerceptionConfig(), learner)
    with pytest.raises(ValueError):
        make_actor("sac", env.config, PerceptionConfig(), None)


def test_scripted_perfect_episode_succeeds_and_logs():
    env = PegInsertionEnv(EnvConfig())
    actor = ScriptedActor(ScriptedConfig())
    log = run_one(env, actor)
    assert log.success
    assert log.steps == log.steps_to_success == len(log.action) == len(log.ee)
    assert set(log.source) == {SOURCE_MB}
    assert set(log.alpha) == {"0"}
    assert log.entered_su and log.entered_shat
    assert log.reward[-1] == 0.0 and all(r == -1.0 for r in log.reward[:-1])
    # flags recomputable from the logged trajectory
    region = Region(np.array(log.shat_center), np.array(log.shat_half))
    for ee, flag in zip(log.ee, log.in_shat):
        assert (flag == "1") == contains(region, np.array(ee))


def test_episode_log_json_round_trip():
    env = PegInsertionEnv(EnvConfig())
    log = run_one(env, ScriptedActor(ScriptedConfig()))
    back = EpisodeLog.from_json(log.to_json())
    assert back == log


def test_guapo_outside_region_is_bit_identical_to_attractor():
    """No leakage: while the switch reads 0 the logged action equals the
    attractor's output exactly."""
    env = PegInsertionEnv(EnvConfig())
    learner = small_learner(env)
    actor = GuapoActor(learner, PerceptionConfig())
    log = run_one(env, actor, seed=3)
    assert log.shat_center is not None
    replay_ee = [np.array(log.start_ee)] + [np.array(e) for e in log.ee[:-1]]
    checked = 0
    for t, src in enumerate(log.source):
        if src != SOURCE_MB:
            continue
        expect = attractor_action(replay_ee[t], np.array(log.shat_center), 1.0,
                                  env.config.max_step)
        assert np.array_equal(np.array(log.action[t]), np.round(expect, 7))
        assert log.alpha[t] == "0"
        checked += 1
    assert checked > 0


def test_guapo_switch_flips_inside_region():
    env = PegInsertionEnv(EnvConfig())
    learner = small_learner(env)
    actor = GuapoActor(learner, PerceptionConfig())
    # run until some episode enters the region (funnel makes this quick)
    for seed in range(6):
        log = run_one(env, actor, seed=seed)
        if "R" in log.source:
            break
    assert "R" in log.source
    region = Region(np.array(log.shat_center), np.array(log.shat_half))
    replay_ee = [np.array(log.start_ee)] + [np.array(e) for e in log.ee[:-1]]
    for t, src in enumerate(log.source):
        assert (src == SOURCE_RL) == contains(region, replay_ee[t])
        assert (log.alpha[t] == "1") == (src == SOURCE_RL)


def test_guapo_pushes_every_transition():
    env = PegInsertionEnv(EnvConfig())
    learner = small_learner(env, warmup=10 ** 9)   # no updates, just counting
    actor = GuapoActor(learner, PerceptionConfig())
    log = run_one(env, actor, seed=1)
    assert len(learner.buffer) == log.steps


def test_guapo_shrinks_on_success_and_skips_perception():
    env = PegInsertionEnv(EnvConfig())
    learner = small_learner(env, warmup=10 ** 9)
    actor = GuapoActor(learner, PerceptionConfig())
    # walk the env to a success by hand, then hand the terminal state to the
    # actor: shrink semantics do not depend on who produced the actions
    rng0 = np.random.default_rng(0)
    state = env.reset(rng0, box_position=env.sample_box_position(rng0))
    actor.begin_episode(env, state, np.random.default_rng(1))
    assert not actor.goal_localized
    from guapo.mb import ScriptedInsertPolicy
    pol = ScriptedInsertPolicy(ScriptedConfig(), env.hole_position()[:2],
                               env.surface, env.config.goal_depth,
                               env.config.max_step)
    success = False
    for t in range(env.config.horizon):
        res = env.step(state, pol.act(state.ee, t))
        state = res.state
        if res.success:
            success = True
            break
    assert success
    actor.end_episode(env, state, True)
    assert actor.goal_localized
    hole = env.hole_position()
    clearance = env.config.hole_half_width - env.config.peg_half_width
    assert np.all(np.abs(np.array(actor.shat.center[:2]) - hole[:2]) <= clearance + 1e-12)
    assert actor.shat.center[2] == env.surface
    assert np.allclose(actor.shat.half_extents, env.config.su_half_extents)
    # next episode must not rerun perception: marker rng stays untouched
    class Boom:
        def __getattr__(self, name):
            raise AssertionError("perception rng touched after localization")
    r_env, _, r_act, r_upd = rngs(99)
    box = env.sample_box_position(np.random.default_rng(99))
    log2 = run_episode(env, actor, box_position=box, rng_env=r_env,
                       rng_perception=Boom(), rng_act=r_act, rng_update=r_upd,
                       train=True, baseline="guapo")
    assert log2.shat_center == [round(float(x), 9) for x in actor.shat.center]


def test_residual_executes_sum_but_stores_own_action():
    env = PegInsertionEnv(EnvConfig())
    learner = small_learner(env, warmup=10 ** 9)
    actor = ResidualActor(learner, PerceptionConfig())
    log = run_one(env, actor, seed=2)
    assert set(log.source) == {SOURCE_RL}
    assert len(learner.buffer) == log.steps
    # stored actions are the learner's component: bounded by the squash,
    # strictly inside the step bound almost surely
    stored = learner.buffer._act[:log.steps]
    assert np.all(np.abs(stored) <= env.config.max_step + 1e-7)
    # executed = clip(attractor + rl): recompute step 0 from the log
    mb0 = attractor_action(np.array(log.start_ee), actor.target, 1.0,
                           env.config.max_step)
    expect0 = np.clip(mb0 + stored[0], -env.config.max_step, env.config.max_step)
    assert np.allclose(np.array(log.action[0]), expect0, atol=1e-7)


def test_residual_reduces_to_attractor_when_rl_is_zero():
    env = PegInsertionEnv(EnvConfig())
    learner = small_learner(env)
    actor = ResidualActor(learner, PerceptionConfig())
    rng0 = np.random.default_rng(0)
    state = env.reset(rng0, box_position=env.sample_box_position(rng0))
    actor.begin_episode(env, state, np.random.default_rng(1))
    learner.act = lambda obs, rng, deterministic=False: np.zeros(3)
    obs = env.local_observation(state)
    action, _ = actor.act(env, state, obs, np.random.default_rng(2))
    assert np.array_equal(action, attractor_action(state.ee, actor.target, 1.0,
                                                   env.config.max_step))


def test_eval_episodes_do_not_push_or_update():
    env = PegInsertionEnv(EnvConfig())
    learner = small_learner(env, warmup=1)
    actor = SACActor(learner, PerceptionConfig())
    log = run_one(env, actor, seed=4, train=False, phase="eval")
    assert len(learner.buffer) == 0
    assert learner.updates == 0
    assert log.phase == "eval"


def test_sac_reward_wiring_is_shaped():
    env = PegInsertionEnv(EnvConfig())
    learner = small_learner(env, warmup=10 ** 9)
    actor = SACActor(learner, PerceptionConfig())
    log = run_one(env, actor, seed=5)
    assert env.reward_convention == REWARD_SHAPED
    # far from the goal the shaped reward is a negative distance, much
    # smaller in magnitude than the step penalty
    assert log.reward[0] < 0.0
    assert log.reward[0] == pytest.approx(
        -np.linalg.norm(np.array(log.ee[0]) - env.goal_estimate), abs=1e-5)


def test_scripted_uses_step_penalty():
    env = PegInsertionEnv(EnvConfig())
    run_one(env, ScriptedActor(ScriptedConfig()))
    assert env.reward_convention == REWARD_STEP

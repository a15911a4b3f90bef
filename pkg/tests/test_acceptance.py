"""Acceptance gate: reproduces the baseline comparison table and certifies
the method's invariants end to end.

The table sweep (first criterion) runs every baseline at the full default
budget in a module-scoped fixture and takes most of an hour of CPU; the
remaining criteria reuse its artifacts or run standalone in seconds to a
couple of minutes.  One pass/fail line per criterion is echoed after the
pytest summary.  Run only this gate with:

    pytest tests/test_acceptance.py -v
"""
import dataclasses
import time

import numpy as np
import pytest

from conftest import record_criterion
import guapo.harness as harness_mod
from guapo.agent import SOURCE_MB, GuapoActor
from guapo.cli import EXIT_OK, main
from guapo.env import EnvConfig, PegInsertionEnv
from guapo.geometry import CameraIntrinsics, Cuboid, Pose, project_points, \
    quat_from_rotvec, rotation_angle
from guapo.harness import load_config, run_experiment
from guapo.mb import attractor_action
from guapo.perception import PerceptionConfig, build_uncertain_region, run_perception
from guapo.pnp import solve_pnp
from guapo.regions import NonparametricRegionSet, Region, contains, \
    membership_likelihood
from guapo.sac import SACHyper, SACLearner, actor_loss, actor_loss_and_grads, \
    critic_loss, critic_loss_and_grads

TABLE_ORDER = ("mb-perfect", "mb-dope", "mb-rand-perfect", "mb-rand-dope",
               "sac", "residual", "guapo")


class SwitchAudit:
    """Counts model-based steps whose executed action differs bit-for-bit from
    an independent recomputation of the funnel command (must stay at zero)."""

    def __init__(self):
        self.mb_steps = 0
        self.rl_steps = 0
        self.violations = 0


class AuditedActor:
    """Transparent wrapper around the hybrid actor; observes, never alters."""

    def __init__(self, inner: GuapoActor, audit: SwitchAudit):
        self.inner = inner
        self.audit = audit
        self.needs_obs = inner.needs_obs
        self.trains = inner.trains

    @property
    def gain(self):
        return self.inner.gain

    @gain.setter
    def gain(self, value):
        self.inner.gain = value

    @property
    def region(self):
        return self.inner.region

    def begin_episode(self, env, state, rng):
        return self.inner.begin_episode(env, state, rng)

    def act(self, env, state, obs, rng):
        action, source = self.inner.act(env, state, obs, rng)
        if source == SOURCE_MB:
            self.audit.mb_steps += 1
            expected = attractor_action(state.ee, self.inner.shat.center,
                                        self.inner.gain, env.config.max_step)
            if not np.array_equal(np.asarray(action), np.asarray(expected)):
                self.audit.violations += 1
        else:
            self.audit.rl_steps += 1
        return action, source

    def feedback(self, *args, **kwargs):
        return self.inner.feedback(*args, **kwargs)

    def end_episode(self, *args, **kwargs):
        return self.inner.end_episode(*args, **kwargs)


@pytest.fixture(scope="module")
def sweep():
    """Full-budget run of every baseline under one master seed.

    The hybrid run is wrapped with the switch audit so the bit-identity
    criterion observes the exact same run that produces the table row.
    """
    cfg = load_config(None)
    audit = SwitchAudit()
    rows, timings = {}, {}
    guapo_logs, guapo_curves = [], []
    t_total = time.perf_counter()
    for name in TABLE_ORDER:
        cell = dataclasses.replace(cfg, baseline=name)
        t0 = time.perf_counter()
        if name == "guapo":
            original = harness_mod.make_actor

            def audited(*args, **kwargs):
                actor = original(*args, **kwargs)
                return AuditedActor(actor, audit) if isinstance(actor, GuapoActor) else actor

            harness_mod.make_actor = audited
            try:
                table, logs = run_experiment(cell)
            finally:
                harness_mod.make_actor = original
            guapo_logs, guapo_curves = logs, table.curves
        else:
            table, _ = run_experiment(cell)
        rows[name] = table.row(name)
        timings[name] = time.perf_counter() - t0
    return {
        "config": cfg,
        "rows": rows,
        "timings": timings,
        "elapsed_min": (time.perf_counter() - t_total) / 60.0,
        "guapo_logs": guapo_logs,
        "guapo_curves": guapo_curves,
        "audit": audit,
    }


def test_criterion_1_baseline_table(sweep):
    r = sweep["rows"]
    sr = {n: r[n].success_rate_pct for n in TABLE_ORDER}
    steps_ok = (r["guapo"].avg_steps_success is not None
                and r["mb-rand-dope"].avg_steps_success is not None
                and r["guapo"].avg_steps_success < r["mb-rand-dope"].avg_steps_success)
    checks = {
        "mb-perfect=100": sr["mb-perfect"] == 100.0,
        "mb-dope<=10": sr["mb-dope"] <= 10.0,
        "mb-rand-perfect>=70": sr["mb-rand-perfect"] >= 70.0,
        "ordering": sr["mb-dope"] < sr["mb-rand-dope"] < sr["mb-rand-perfect"],
        "guapo>=80": sr["guapo"] >= 80.0,
        "sac<=10": sr["sac"] <= 10.0,
        "residual<=30": sr["residual"] <= 30.0,
        "residual-in-region=100": r["residual"].pct_in_shat_u == 100.0,
        "sac-in-region<=20": r["sac"].pct_in_shat_u <= 20.0,
        "steps guapo<mb-rand-dope": steps_ok,
    }
    ok = all(checks.values())
    fmt = lambda v: "n/a" if v is None else f"{v:.1f}"
    detail = ("success% " + " ".join(f"{n}={sr[n]:.1f}" for n in TABLE_ORDER)
              + f"; in-region residual={r['residual'].pct_in_shat_u:.1f}"
              + f" sac={r['sac'].pct_in_shat_u:.1f}"
              + f"; steps guapo={fmt(r['guapo'].avg_steps_success)}"
              + f" mb-rand-dope={fmt(r['mb-rand-dope'].avg_steps_success)}"
              + f"; sweep {sweep['elapsed_min']:.1f} min"
              + ("" if sweep["elapsed_min"] < 45.0 else " (above 45 min target)"))
    record_criterion(1, ok, detail)
    failed = [k for k, v in checks.items() if not v]
    assert ok, f"failed bounds: {failed}; {detail}"


def test_criterion_2_first_success_within_20_iterations(sweep):
    success_iters = [it for it, ep, s, steps in sweep["guapo_curves"] if s]
    first = min(success_iters) + 1 if success_iters else None
    ok = first is not None and first <= 20
    detail = (f"first training insertion in iteration {first} (limit 20)"
              if first else "no training insertion in the whole budget")
    record_criterion(2, ok, detail)
    assert ok, detail


def test_criterion_3_shrink_localizes_and_speeds_up(sweep):
    cfg = sweep["config"]
    clearance = cfg.env.hole_half_width - cfg.env.peg_half_width
    train = [l for l in sweep["guapo_logs"] if l.phase == "train"]
    evals = [l for l in sweep["guapo_logs"] if l.phase == "eval"]
    first_idx = next((i for i, l in enumerate(train) if l.success), None)
    if first_idx is None:
        record_criterion(3, False, "no training success; shrink never armed")
        assert False, "no training success"
    post = train[first_idx + 1:] + evals
    worst_center = 0.0
    for log in post:
        assert log.shat_center is not None
        miss = np.abs(np.asarray(log.shat_center[:2])
                      - np.asarray(log.true_hole[:2])).max()
        worst_center = max(worst_center, miss)
    centered = worst_center <= clearance + 1e-9
    pre_steps = float(train[first_idx].steps_to_success)
    post_success = [l.steps_to_success for l in train[first_idx + 1:] if l.success]
    faster = bool(post_success) and float(np.mean(post_success)) < pre_steps
    ok = centered and faster
    detail = (f"post-success center miss max {worst_center * 1000:.2f} mm"
              f" (clearance {clearance * 1000:.1f} mm); first insertion"
              f" {pre_steps:.0f} steps, later mean "
              + (f"{np.mean(post_success):.1f}" if post_success else "n/a"))
    record_criterion(3, ok, detail)
    assert ok, detail


def test_criterion_4_membership_matches_explicit_sum():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(10_000):
        m = int(rng.integers(1, 9))
        regions = [Region(rng.uniform(-1, 1, 3), rng.uniform(0.05, 0.5, 3))
                   for _ in range(m)]
        w = rng.uniform(0.1, 1.0, m)
        rs = NonparametricRegionSet(regions, w / w.sum())
        if rng.random() < 0.5:
            p = rng.uniform(-1.5, 1.5, 3)
        else:
            anchor = regions[int(rng.integers(m))]
            p = anchor.center + rng.uniform(-1.2, 1.2, 3) * anchor.half_extents
        expected = 0.0
        # plain-loop oracle, no shared code with the implementation
        for reg, wi in zip(rs.regions, rs.weights):
            inside = True
            for j in range(3):
                if abs(p[j] - reg.center[j]) > reg.half_extents[j]:
                    inside = False
                    break
            if inside:
                expected += float(wi)
        worst = max(worst, abs(membership_likelihood(rs, p) - expected))
    ok = worst <= 1e-12
    detail = f"worst |likelihood - oracle| = {worst:.2e} over 10000 cases"
    record_criterion(4, ok, detail)
    assert ok, detail


def test_criterion_5_switch_bit_identity(sweep):
    audit = sweep["audit"]
    ok = audit.violations == 0 and audit.mb_steps > 0 and audit.rl_steps > 0
    detail = (f"{audit.mb_steps} funnel steps, {audit.rl_steps} learned steps,"
              f" {audit.violations} bit mismatches")
    record_criterion(5, ok, detail)
    assert ok, detail


def test_criterion_6_pnp_exact_recovery():
    cam = CameraIntrinsics(fx=420.0, fy=420.0, cx=160.0, cy=120.0,
                           width=320, height=240)
    points = Cuboid((0.06, 0.06, 0.045)).keypoints()
    rng = np.random.default_rng(6)
    worst_t = worst_r = 0.0
    monotone = True
    for _ in range(100):
        pose = Pose(quat_from_rotvec(rng.uniform(-0.8, 0.8, 3)),
                    np.array([rng.uniform(-0.15, 0.15), rng.uniform(-0.1, 0.1),
                              rng.uniform(0.5, 1.5)]))
        result = solve_pnp(points, project_points(pose, cam, points), cam)
        worst_t = max(worst_t, float(np.linalg.norm(
            result.pose.translation - pose.translation)))
        worst_r = max(worst_r, rotation_angle(result.pose.quaternion, pose.quaternion))
        if np.any(np.diff(result.rms_history) > 1e-12):
            monotone = False
    ok = worst_t < 1e-6 and worst_r < 1e-6 and monotone
    detail = (f"worst translation {worst_t:.2e} m, rotation {worst_r:.2e} rad,"
              f" residual history {'monotone' if monotone else 'NOT monotone'}")
    record_criterion(6, ok, detail)
    assert ok, detail


def _fd_all_coords(loss_fn, params, grads, eps=1e-6):
    # coordinates whose true derivative sits at the finite-difference noise
    # floor (~1e-10 here) cannot be measured relatively; an absolute bound of
    # 1e-8 on those is the strongest statement double precision supports
    worst_rel, worst_abs = 0.0, 0.0
    for p, g in zip(params, grads):
        for i in range(p.size):
            orig = p.flat[i]
            p.flat[i] = orig + eps
            hi = loss_fn()
            p.flat[i] = orig - eps
            lo = loss_fn()
            p.flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            an = g.flat[i]
            worst_abs = max(worst_abs, abs(fd - an))
            if abs(fd - an) <= 1e-8:
                continue
            worst_rel = max(worst_rel, abs(fd - an) / max(abs(fd), abs(an)))
    return worst_rel, worst_abs


def test_criterion_7_gradient_certification():
    """Relative error of every analytic gradient coordinate against central
    finite differences, at 20 generic parameter points per loss.

    Freshly initialized nets sit on a measure-zero ridge: biases are exactly
    zero, so a batch row with an all-dead first layer makes the next
    preactivation exactly 0.0 and the loss one-sidedly kinked there; central
    differences are undefined at such points.  Jittering every parameter with
    continuous noise moves each point off the ridge with probability one,
    which is what "random parameter point" has to mean for a ReLU net.
    """
    worst_critic = worst_actor = abs_critic = abs_actor = 0.0
    for point in range(20):
        hyper = SACHyper(hidden=(8, 8), batch_size=16, buffer_capacity=100)
        learner = SACLearner(6, 2, action_scale=0.005, hyper=hyper,
                             rng=np.random.default_rng(700 + point),
                             dtype=np.float64)
        jitter = np.random.default_rng(800 + point)
        for p in (*learner.critic.net.params, *learner.policy.params):
            p += jitter.normal(0.0, 0.05, p.shape)
        rng = np.random.default_rng(900 + point)
        batch = {
            "obs": rng.standard_normal((16, 6)),
            "act": rng.uniform(-0.005, 0.005, (16, 2)),
            "next_obs": rng.standard_normal((16, 6)),
            "rew": rng.standard_normal(16),
            "done": (rng.random(16) < 0.2).astype(float),
        }
        eps_next = rng.standard_normal((16, 2))
        _, cgrads = critic_loss_and_grads(learner, batch, eps_next)
        rel, ab = _fd_all_coords(lambda: critic_loss(learner, batch, eps_next),
                                 learner.critic.net.params, cgrads)
        worst_critic = max(worst_critic, rel)
        abs_critic = max(abs_critic, ab)
        eps = rng.standard_normal((16, 2))
        _, agrads = actor_loss_and_grads(learner, batch, eps)
        rel, ab = _fd_all_coords(lambda: actor_loss(learner, batch, eps),
                                 learner.policy.params, agrads)
        worst_actor = max(worst_actor, rel)
        abs_actor = max(abs_actor, ab)
    ok = worst_critic < 1e-4 and worst_actor < 1e-4
    detail = (f"worst error critic rel {worst_critic:.1e} abs {abs_critic:.1e},"
              f" actor rel {worst_actor:.1e} abs {abs_actor:.1e}"
              " (every coordinate, 20 points each)")
    record_criterion(7, ok, detail)
    assert ok, detail


def test_criterion_8_coverage_monotone_in_k():
    env = PegInsertionEnv(EnvConfig())
    pcfg = PerceptionConfig()
    seq = np.random.SeedSequence(8)
    n = 500
    counts = np.zeros(3)
    for child in seq.spawn(n):
        rng = np.random.default_rng(child)
        state = env.reset(rng)
        products = run_perception(state.box_pose, pcfg, rng)
        hole = env.hole_position()
        for k in (0, 1, 2):
            region = build_uncertain_region(
                products.estimate, pcfg.template_half_extents, float(k))
            counts[k] += contains(region, hole)
    cov = counts / n
    ok = (cov[0] <= cov[1] + 1e-12 and cov[1] <= cov[2] + 1e-12
          and cov[2] >= cov[0] + 0.1)
    detail = (f"coverage k=0/1/2: {cov[0]:.3f}/{cov[1]:.3f}/{cov[2]:.3f}"
              f" over {n} episodes")
    record_criterion(8, ok, detail)
    assert ok, detail


def test_criterion_9_rerun_byte_identical(tmp_path, monkeypatch):
    monkeypatch.delenv("GUAPO_SEED", raising=False)
    small = tmp_path / "small.cfg"
    small.write_text(
        "[experiment]\nbaseline = guapo\nseed = 5\niterations = 3\n"
        "episodes_per_iteration = 2\neval_trials = 4\n[env]\nhorizon = 400\n")
    pairs = []
    for label, argv in (
        ("mb-rand-dope", ["run", "--baseline", "mb-rand-dope", "--quiet"]),
        ("guapo", ["run", "--config", str(small), "--quiet"]),
    ):
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{label}-{rep}"
            assert main(argv + ["--out", str(out)]) == EXIT_OK
            outs.append((out / "metrics.csv").read_bytes()
                        + (out / "curves.csv").read_bytes())
        pairs.append((label, outs[0] == outs[1]))
    ok = all(same for _, same in pairs)
    detail = "; ".join(f"{label} rerun {'identical' if same else 'DIFFERS'}"
                       for label, same in pairs)
    record_criterion(9, ok, detail)
    assert ok, detail

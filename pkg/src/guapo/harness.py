"""Experiment orchestration: config files, seed streams, training plus
evaluation runs over the baseline matrix, metric aggregation, and artifacts.

Random streams are derived from the master seed by fixed component labels so
that baselines differing only in policy consume identical environment draws.
Evaluation has its own seed (defaulting to the master) and label, so training
outcomes and evaluation draws cannot influence each other.

Artifacts per run: `metrics.csv` (one row per baseline), `curves.csv` (one row
per training episode), `episodes.jsonl` (full logs), and `config.resolved`
(a snapshot in the same sectioned key=value format the parser reads).
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .agent import BASELINES, EpisodeLog, make_actor, run_episode
from .env import EnvConfig, PegInsertionEnv
from .mb import ScriptedConfig
from .perception import PerceptionConfig
from .sac import SACHyper, SACLearner

STREAM_LABELS = {"env": 0, "perception": 1, "policy-init": 2, "exploration": 3, "eval": 4}

METRICS_COLUMNS = ("baseline", "success_rate_pct", "avg_steps_success",
                   "pct_in_Su", "pct_in_Shat_u", "seed")
CURVES_COLUMNS = ("iteration", "episode", "success", "steps")

LEARNING_BASELINES = ("sac", "residual", "guapo")


class ConfigError(ValueError):
    """Invalid configuration; the message carries the section.field path."""


def derive_rng(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Independent generator for one component, reproducible from the seed."""
    key = (STREAM_LABELS[label],) + tuple(int(i) for i in indices)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


@dataclass
class ExperimentConfig:
    baseline: str = "guapo"
    seed: int = 0
    eval_seed: int | None = None      # None: reuse the master seed
    iterations: int = 60
    episodes_per_iteration: int = 2
    eval_trials: int = 30
    attractor_gain: float = 1.0       # funnel gain for guapo / residual
    env: EnvConfig = field(default_factory=EnvConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    sac: SACHyper = field(default_factory=SACHyper)
    scripted: ScriptedConfig = field(default_factory=ScriptedConfig)

    def __post_init__(self):
        if self.baseline not in BASELINES:
            raise ConfigError(f"experiment.baseline: unknown baseline {self.baseline!r}, "
                              f"expected one of {BASELINES}")
        for name in ("iterations", "episodes_per_iteration", "eval_trials"):
            if getattr(self, name) < 1:
                raise ConfigError(f"experiment.{name}: must be >= 1")

    def resolved_eval_seed(self) -> int:
        return self.seed if self.eval_seed is None else self.eval_seed


_SECTIONS = {
    "experiment": None,          # scalar fields of ExperimentConfig itself
    "env": EnvConfig,
    "perception": PerceptionConfig,
    "sac": SACHyper,
    "scripted": ScriptedConfig,
}


def _coerce(raw: str, default, path: str):
    """Parse a config string against the type of the field's default value."""
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p for p in raw.replace(",", " ").split() if p]
            elem = int if all(isinstance(x, int) for x in default) else float
            return tuple(elem(p) for p in parts)
        if default is None:
            return None if raw.lower() in ("", "none") else int(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path: str | None = None, overrides: dict | None = None,
                use_env: bool = True) -> ExperimentConfig:
    """Build an ExperimentConfig from an optional file plus overrides.

    Overrides are dotted paths ("experiment.seed", "env.max_step") applied
    after the file; the GUAPO_SEED environment variable, when set, replaces
    the master seed unless an explicit seed override is present.  Pass
    use_env=False when reading back a recorded config.resolved, which must
    reflect the run as it happened rather than the current shell.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is not None:
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")

    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    scalar_fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)
                     if f.name not in _SECTIONS}

    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{section}: unknown config section")
        cls = _SECTIONS[section]
        known = (scalar_fields if cls is None
                 else {f.name: f for f in dataclasses.fields(cls)})
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"{section}.{key}: unknown option")
            f = known[key]
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            values[section][key] = _coerce(raw, default, f"{section}.{key}")

    # precedence: explicit overrides (CLI flags) > GUAPO_SEED > file > defaults
    if use_env and os.environ.get("GUAPO_SEED"):
        values["experiment"]["seed"] = _coerce(os.environ["GUAPO_SEED"], 0,
                                               "experiment.seed (GUAPO_SEED)")

    for dotted, raw in (overrides or {}).items():
        if "." not in dotted:
            dotted = f"experiment.{dotted}"
        section, _, key = dotted.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"{section}: unknown config section")
        cls = _SECTIONS[section]
        known = (scalar_fields if cls is None
                 else {f.name: f for f in dataclasses.fields(cls)})
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown option")
        if isinstance(raw, str):
            f = known[key]
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            raw = _coerce(raw, default, f"{section}.{key}")
        values[section][key] = raw

    try:
        return ExperimentConfig(
            env=EnvConfig(**values["env"]),
            perception=PerceptionConfig(**values["perception"]),
            sac=SACHyper(**values["sac"]),
            scripted=ScriptedConfig(**values["scripted"]),
            **values["experiment"])
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def dump_config(config: ExperimentConfig) -> str:
    """Sectioned key=value snapshot; feeding it back to load_config round-trips."""
    out = io.StringIO()
    for section, cls in _SECTIONS.items():
        out.write(f"[{section}]\n")
        if cls is None:
            items = [(f.name, getattr(config, f.name))
                     for f in dataclasses.fields(ExperimentConfig)
                     if f.name not in _SECTIONS]
        else:
            sub = getattr(config, section)
            items = [(f.name, getattr(sub, f.name)) for f in dataclasses.fields(cls)]
        for name, value in items:
            if isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            elif value is None:
                value = "none"
            out.write(f"{name} = {value}\n")
        out.write("\n")
    return out.getvalue()


@dataclass
class MetricsRow:
    baseline: str
    success_rate_pct: float
    avg_steps_success: float | None   # None when no trial succeeded
    pct_in_su: float
    pct_in_shat_u: float
    seed: int

    def as_csv(self) -> list:
        return [self.baseline,
                f"{self.success_rate_pct:.2f}",
                "n/a" if self.avg_steps_success is None else f"{self.avg_steps_success:.1f}",
                f"{self.pct_in_su:.2f}",
                f"{self.pct_in_shat_u:.2f}",
                str(self.seed)]


@dataclass
class MetricsTable:
    rows: list
    curves: list            # (iteration, episode, success, steps) per training episode

    def row(self, baseline: str) -> MetricsRow:
        for r in self.rows:
            if r.baseline == baseline:
                return r
        raise KeyError(baseline)


def summarize(baseline: str, seed: int, logs: list) -> MetricsRow:
    """Table metrics over the evaluation trials of one run."""
    trials = [l for l in logs if l.phase == "eval"]
    if not trials:
        return MetricsRow(baseline, 0.0, None, 0.0, 0.0, seed)
    n = len(trials)
    succ = [t for t in trials if t.success]
    steps = [t.steps_to_success for t in succ]
    return MetricsRow(
        baseline=baseline,
        success_rate_pct=100.0 * len(succ) / n,
        avg_steps_success=(sum(steps) / len(steps)) if steps else None,
        pct_in_su=100.0 * sum(t.entered_su for t in trials) / n,
        pct_in_shat_u=100.0 * sum(t.entered_shat for t in trials) / n,
        seed=seed)


def run_experiment(config: ExperimentConfig, progress=None) -> tuple:
    """Train (when the baseline learns) and evaluate; returns (table, logs).

    Fully deterministic in (config, master seed, eval seed).  The box pose is
    drawn once per run from the env stream, so every baseline under the same
    seed faces the same scene.
    """
    baseline = config.baseline
    env = PegInsertionEnv(config.env)
    seed = config.seed
    box = env.sample_box_position(derive_rng(seed, "env"))

    learner = None
    if baseline in LEARNING_BASELINES:
        learner = SACLearner(env.observation_dim(), 3, config.env.max_step,
                             config.sac, derive_rng(seed, "policy-init"),
                             patch_len=config.env.patch_size ** 2)
    actor = make_actor(baseline, config.env, config.perception, learner,
                       config.scripted)
    if hasattr(actor, "gain"):
        actor.gain = config.attractor_gain

    logs: list[EpisodeLog] = []
    curves = []
    if actor.trains:
        for it in range(config.iterations):
            for sub in range(config.episodes_per_iteration):
                ep = it * config.episodes_per_iteration + sub
                log = run_episode(
                    env, actor, box_position=box,
                    rng_env=derive_rng(seed, "env", ep),
                    rng_perception=derive_rng(seed, "perception", ep),
                    rng_act=derive_rng(seed, "exploration", ep, 0),
                    rng_update=derive_rng(seed, "exploration", ep, 1),
                    train=True, baseline=baseline, phase="train",
                    iteration=it, episode=ep)
                logs.append(log)
                curves.append((it, ep, int(log.success), log.steps))
            if progress is not None:
                done = sum(c[2] for c in curves)
                progress(f"{baseline}: iteration {it + 1}/{config.iterations}, "
                         f"{done} training successes")

    eval_seed = config.resolved_eval_seed()
    for k in range(config.eval_trials):
        log = run_episode(
            env, actor, box_position=box,
            rng_env=derive_rng(eval_seed, "eval", k, 0),
            rng_perception=derive_rng(eval_seed, "eval", k, 1),
            rng_act=derive_rng(eval_seed, "eval", k, 2),
            rng_update=derive_rng(eval_seed, "eval", k, 3),
            train=False, baseline=baseline, phase="eval",
            iteration=k, episode=k)
        logs.append(log)
    if progress is not None:
        row = summarize(baseline, seed, logs)
        progress(f"{baseline}: eval success {row.success_rate_pct:.1f}% "
                 f"over {config.eval_trials} trials")

    table = MetricsTable(rows=[summarize(baseline, seed, logs)], curves=curves)
    return table, logs


def _atomic_write(path: str, data: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(data)
    os.replace(tmp, path)


def metrics_csv_text(rows: list) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for row in rows:
        w.writerow(row.as_csv())
    return out.getvalue()


def write_metrics_csv(path: str, rows: list) -> None:
    _atomic_write(path, metrics_csv_text(rows))


def write_curves_csv(path: str, curves: list) -> None:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CURVES_COLUMNS)
    for it, ep, success, steps in curves:
        w.writerow([it, ep, success, steps])
    _atomic_write(path, out.getvalue())


def write_episodes_jsonl(path: str, logs: list) -> None:
    _atomic_write(path, "".join(log.to_json() + "\n" for log in logs))


def emit_outputs(table: MetricsTable, logs: list, config: ExperimentConfig,
                 out_dir: str) -> dict:
    """Write the full artifact set; returns the path of each file."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "metrics": os.path.join(out_dir, "metrics.csv"),
        "curves": os.path.join(out_dir, "curves.csv"),
        "episodes": os.path.join(out_dir, "episodes.jsonl"),
        "config": os.path.join(out_dir, "config.resolved"),
    }
    write_metrics_csv(paths["metrics"], table.rows)
    write_curves_csv(paths["curves"], table.curves)
    write_episodes_jsonl(paths["episodes"], logs)
    _atomic_write(paths["config"], dump_config(config))
    return paths


def run_sweep(config: ExperimentConfig, baselines, out_dir: str,
              progress=None) -> MetricsTable:
    """Run several baselines under one seed; per-baseline artifact dirs plus a
    merged metrics.csv at the top level."""
    rows = []
    os.makedirs(out_dir, exist_ok=True)
    for name in baselines:
        cell = dataclasses.replace(config, baseline=name)
        table, logs = run_experiment(cell, progress=progress)
        emit_outputs(table, logs, cell, os.path.join(out_dir, name))
        rows.extend(table.rows)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), rows)
    return MetricsTable(rows=rows, curves=[])


def read_episodes(path: str) -> list:
    with open(path) as f:
        return [EpisodeLog.from_json(line) for line in f if line.strip()]


def replay_metrics(episodes_path: str, seed: int | None = None) -> MetricsTable:
    """Recompute the metrics table from an episodes.jsonl file alone.

    Episode-level flags are rebuilt from the per-step records rather than
    trusted, so this doubles as an integrity check of the logs.  The seed
    column is read from a sibling config.resolved when not given.
    """
    if seed is None:
        sibling = os.path.join(os.path.dirname(os.path.abspath(episodes_path)),
                               "config.resolved")
        seed = 0
        if os.path.exists(sibling):
            seed = load_config(sibling, use_env=False).seed
    logs = read_episodes(episodes_path)
    by_baseline: dict[str, list] = {}
    for log in logs:
        n = log.steps
        if len(log.ee) != n or len(log.source) != n or len(log.in_su) != n:
            raise ValueError(f"corrupt episode record (episode {log.episode}): "
                             "per-step arrays disagree on length")
        log.entered_su = "1" in log.in_su
        log.entered_shat = "1" in log.in_shat
        by_baseline.setdefault(log.baseline, []).append(log)
    rows = [summarize(name, seed, cell) for name, cell in by_baseline.items()]
    return MetricsTable(rows=rows, curves=[])


def print_progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)

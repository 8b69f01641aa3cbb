"""Gradient heatmaps, gradient-direction line searches, cliff detection, and
the A2C-vs-PPO cliff experiment.

A line search walks a fixed distance along the L2-normalized policy-gradient
estimate of each checkpoint, sampling densely near the origin. A checkpoint is
a cliff when, within the near-origin window, returns drop by at least half
relative to the pre-drop value AND by at least a quarter of the global reward
range of the whole line search (the second condition guards against
evaluation noise on flat landscapes).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nets
from .directions import (
    Direction,
    ZeroVectorError,
    estimate_policy_gradient,
    l2_normalize,
    perturb,
    sample_filter_normalized_direction,
)
from .envs import get_spec
from .evaluation import (
    EvalBudget,
    EvalStatistic,
    GridSpec,
    SurfaceGrid,
    evaluate_grid,
    evaluate_params,
    parallel_map,
)
from .nets import Checkpoint
from .rng import Rng, derive_seed
from .training import RolloutWorker, RunDirectory, TrainConfig, a2c_update, compute_gae, ppo_update

LINESEARCH_CSV_SCHEMA = "linesearch.v1"
CLIFFS_JSON_SCHEMA = "cliffs.v1"
EXPERIMENT_CSV_SCHEMA = "cliff-experiment.v1"
EXPERIMENT_DETAIL_CSV_SCHEMA = "cliff-experiment-detail.v1"

SEGMENT_ORIGIN = "origin"
SEGMENT_FINE = "fine"
SEGMENT_COARSE = "coarse"


# --- gradient heatmap ---------------------------------------------------------


def gradient_heatmap(
    ckpt: Checkpoint,
    spec: GridSpec,
    grad_steps: int,
    seed: int,
    workers: int = 1,
    grad_gamma: float = 0.99,
):
    """Surface with the normalized gradient estimate on the x axis and a
    fresh filter-normalized random direction on the y axis."""
    grad = estimate_policy_gradient(ckpt, grad_steps, grad_gamma, derive_seed(seed, 0))
    try:
        gdir = l2_normalize(
            grad,
            source={
                "checkpoint": ckpt.path or "<in-memory>",
                "grad_steps": grad_steps,
                "gamma": grad_gamma,
                "seed": seed,
            },
        )
    except ZeroVectorError:
        raise ZeroVectorError(
            "policy gradient estimate is exactly zero; increase grad_steps or "
            "check that the environment produces non-constant returns"
        ) from None
    ydir = sample_filter_normalized_direction(ckpt.params, ckpt.arch, derive_seed(seed, 1))
    grid = evaluate_grid(ckpt, gdir, ydir, spec, workers)
    return grid, gdir, ydir


# --- line search ----------------------------------------------------------------


@dataclass(frozen=True)
class LineSearchSpec:
    budget: EvalBudget
    distance: float = 0.4
    coarse_points: int = 20
    fine_points: int = 10

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError("distance must be positive")
        if self.coarse_points < 2:
            raise ValueError("coarse_points must be >= 2")
        if self.fine_points < 0:
            raise ValueError("fine_points must be >= 0")


def line_offsets(spec: LineSearchSpec) -> list[tuple[float, str]]:
    """Strictly increasing (offset, segment) list: the origin, coarse points
    at k*D/coarse, and fine points strictly between the first two coarse
    offsets."""
    coarse = [spec.distance * k / spec.coarse_points for k in range(1, spec.coarse_points + 1)]
    fine = []
    if spec.fine_points > 0:
        lo, hi = coarse[0], coarse[1]
        step = (hi - lo) / (spec.fine_points + 1)
        fine = [lo + k * step for k in range(1, spec.fine_points + 1)]
    out = [(0.0, SEGMENT_ORIGIN)]
    out += [(x, SEGMENT_FINE) for x in fine]
    out += [(x, SEGMENT_COARSE) for x in coarse]
    out.sort(key=lambda t: t[0])
    return out


@dataclass
class LineSample:
    offset: float
    segment: str
    stat: EvalStatistic


@dataclass
class CheckpointLine:
    step: int
    gradient_source: dict
    samples: list[LineSample]


@dataclass
class LineSearchResult:
    env: str
    spec: LineSearchSpec
    checkpoints: list[CheckpointLine]


def _estimate_gradient_task(args):
    k, path, grad_steps, gamma, seed = args
    ckpt = nets.load_checkpoint(path)
    grad = estimate_policy_gradient(ckpt, grad_steps, gamma, seed)
    return k, grad.blocks


def _line_point_task(args):
    key, path, gdir_blocks, offset, budget = args
    ckpt = nets.load_checkpoint(path)
    gdir = Direction(gdir_blocks, "l2_normalized_gradient", {})
    theta = perturb(ckpt.params, gdir, offset)
    stat = evaluate_params(theta, ckpt.arch, ckpt.env, budget)
    return key, stat


def line_search(
    run: RunDirectory,
    spec: LineSearchSpec,
    grad_steps: int,
    seed: int,
    workers: int = 1,
    grad_gamma: float | None = None,
) -> LineSearchResult:
    """Evaluate returns at increasing offsets along each checkpoint's
    normalized gradient estimate. ``grad_gamma`` defaults to the run's
    training discount."""
    steps = run.checkpoint_steps()
    if not steps:
        raise ValueError(f"run {run.path} has no checkpoints")
    run_cfg = run.config()
    env_name = run_cfg["env"]
    if grad_gamma is None:
        grad_gamma = float(run_cfg["config"]["gamma"])

    # one shared estimation seed: identical parameters always yield an
    # identical gradient direction, so constant-parameter runs trace the same
    # curve at every checkpoint up to evaluation noise
    grad_tasks = [
        (k, str(run.checkpoint_path(step)), grad_steps, grad_gamma, derive_seed(seed, 0))
        for k, step in enumerate(steps)
    ]
    grads: dict[int, list[np.ndarray]] = {}
    for k, blocks in parallel_map(_estimate_gradient_task, grad_tasks, workers):
        grads[k] = blocks

    offsets = line_offsets(spec)
    point_tasks = []
    gdirs: dict[int, Direction] = {}
    for k, step in enumerate(steps):
        try:
            gdir = l2_normalize(
                Direction(grads[k], "raw", {}),
                source={"checkpoint": str(run.checkpoint_path(step)), "grad_steps": grad_steps,
                        "gamma": grad_gamma, "seed": seed},
            )
        except ZeroVectorError:
            raise ZeroVectorError(
                f"gradient estimate at step {step} is exactly zero; increase grad_steps"
            ) from None
        gdirs[k] = gdir
        for m, (offset, _segment) in enumerate(offsets):
            budget = replace(spec.budget, seed=derive_seed(spec.budget.seed, k, 1 + m))
            point_tasks.append(((k, m), str(run.checkpoint_path(step)), gdir.blocks, offset, budget))

    stats: dict[tuple[int, int], EvalStatistic] = {}
    for key, stat in parallel_map(_line_point_task, point_tasks, workers):
        stats[key] = stat

    lines = []
    for k, step in enumerate(steps):
        samples = [
            LineSample(offset, segment, stats[(k, m)])
            for m, (offset, segment) in enumerate(offsets)
        ]
        lines.append(CheckpointLine(step, gdirs[k].seed_or_source, samples))
    return LineSearchResult(env_name, spec, lines)


def write_linesearch_csv(path, result: LineSearchResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {LINESEARCH_CSV_SCHEMA}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["checkpoint_step", "offset", "segment", "mean", "std", "stderr", "episodes", "steps"]
        )
        for line in result.checkpoints:
            for s in line.samples:
                writer.writerow(
                    [line.step, format(s.offset, ".17g"), s.segment,
                     format(s.stat.mean, ".17g"), format(s.stat.std, ".17g"),
                     format(s.stat.stderr, ".17g"), s.stat.episodes, s.stat.steps]
                )


def read_linesearch_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema: {LINESEARCH_CSV_SCHEMA}":
            raise ValueError(f"unsupported linesearch schema line {first!r}")
        reader = csv.reader(fh)
        next(reader)  # header
        rows = []
        for row in reader:
            rows.append(
                {
                    "checkpoint_step": int(row[0]),
                    "offset": float(row[1]),
                    "segment": row[2],
                    "mean": float(row[3]),
                    "std": float(row[4]),
                    "stderr": float(row[5]),
                    "episodes": int(row[6]),
                    "steps": int(row[7]),
                }
            )
    return rows


def linesearch_rows(result: LineSearchResult) -> list[dict]:
    rows = []
    for line in result.checkpoints:
        for s in line.samples:
            rows.append(
                {
                    "checkpoint_step": line.step,
                    "offset": s.offset,
                    "segment": s.segment,
                    "mean": s.stat.mean,
                    "std": s.stat.std,
                    "stderr": s.stat.stderr,
                    "episodes": s.stat.episodes,
                    "steps": s.stat.steps,
                }
            )
    return rows


# --- cliff detection ------------------------------------------------------------


@dataclass(frozen=True)
class CliffCriteria:
    drop_fraction: float = 0.5
    range_fraction: float = 0.25
    window: float = 0.04

    def __post_init__(self):
        for name in ("drop_fraction", "range_fraction", "window"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")


@dataclass
class CheckpointCliff:
    step: int
    is_cliff: bool
    max_drop_fraction: float
    drop_over_global_range: float
    window_used: float


@dataclass
class CliffReport:
    criteria: CliffCriteria
    degenerate_range: bool
    checkpoints: list[CheckpointCliff]

    def cliff_steps(self) -> list[int]:
        return [c.step for c in self.checkpoints if c.is_cliff]

    def non_cliff_steps(self) -> list[int]:
        return [c.step for c in self.checkpoints if not c.is_cliff]


def detect_cliffs(rows: list[dict] | LineSearchResult, criteria: CliffCriteria) -> CliffReport:
    """Classify each checkpoint of a line search.

    Drops are measured between every ordered pair of samples inside the
    near-origin window (offset <= criteria.window); the relative drop uses
    the earlier sample as the base, and the range condition compares the
    largest absolute drop to the global spread of means over the entire
    line search (every checkpoint, every offset).
    """
    if isinstance(rows, LineSearchResult):
        rows = linesearch_rows(rows)
    if not rows:
        raise ValueError("empty line search")
    by_step: dict[int, list[dict]] = {}
    for r in rows:
        by_step.setdefault(r["checkpoint_step"], []).append(r)
    all_means = [r["mean"] for r in rows]
    global_range = max(all_means) - min(all_means)
    degenerate = global_range == 0.0

    checkpoints = []
    for step in sorted(by_step):
        samples = sorted(by_step[step], key=lambda r: r["offset"])
        window = [r for r in samples if r["offset"] <= criteria.window]
        max_frac = -math.inf
        max_drop = -math.inf
        for a_idx in range(len(window)):
            for b_idx in range(a_idx + 1, len(window)):
                drop = window[a_idx]["mean"] - window[b_idx]["mean"]
                max_drop = max(max_drop, drop)
                if window[a_idx]["mean"] != 0.0:
                    max_frac = max(max_frac, drop / abs(window[a_idx]["mean"]))
        if not math.isfinite(max_frac):
            max_frac = 0.0
        if not math.isfinite(max_drop):
            max_drop = 0.0
        range_share = 0.0 if degenerate else max_drop / global_range
        is_cliff = (
            not degenerate
            and max_frac >= criteria.drop_fraction
            and range_share >= criteria.range_fraction
        )
        checkpoints.append(
            CheckpointCliff(step, is_cliff, max_frac, range_share, criteria.window)
        )
    return CliffReport(criteria, degenerate, checkpoints)


def write_cliff_report(path, report: CliffReport) -> None:
    doc = {
        "schema": CLIFFS_JSON_SCHEMA,
        "criteria": {
            "drop_fraction": report.criteria.drop_fraction,
            "range_fraction": report.criteria.range_fraction,
            "window": report.criteria.window,
        },
        "degenerate_range": report.degenerate_range,
        "checkpoints": [
            {
                "step": c.step,
                "is_cliff": c.is_cliff,
                "max_drop_fraction": c.max_drop_fraction,
                "drop_over_global_range": c.drop_over_global_range,
                "window_used": c.window_used,
            }
            for c in report.checkpoints
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


# --- cliff experiment -----------------------------------------------------------


@dataclass
class ExperimentRow:
    algo: str
    learning_rate: float
    n_steps: int
    group: str
    env: str
    checkpoint_step: int
    trial: int
    before_mean: float
    before_stderr: float
    after_mean: float
    after_stderr: float
    percent_change: float


@dataclass
class ExperimentTable:
    rows: list[ExperimentRow]

    def extend(self, other: "ExperimentTable") -> None:
        self.rows.extend(other.rows)

    def group_means(self) -> dict[tuple, tuple[float, int]]:
        """(algo, lr, n_steps, group) -> (mean percent change, datum count)."""
        acc: dict[tuple, list[float]] = {}
        for r in self.rows:
            acc.setdefault((r.algo, r.learning_rate, r.n_steps, r.group), []).append(
                r.percent_change
            )
        return {k: (float(np.mean(v)), len(v)) for k, v in acc.items()}


PERCENT_CHANGE_EPS = 1e-8


def percent_change(before: float, after: float) -> float:
    return 100.0 * (after - before) / max(abs(before), PERCENT_CHANGE_EPS)


def train_phase_from_checkpoint(
    ckpt: Checkpoint,
    config: TrainConfig,
    phase_steps: int,
    seed: int,
):
    """Consume exactly one training phase of ``phase_steps`` environment steps
    starting at the checkpoint: ceil(phase_steps / config.n_steps) sequential
    updates (PPO runs its full epoch/minibatch schedule per rollout)."""
    spec = get_spec(ckpt.env)
    worker = RolloutWorker(spec, derive_seed(seed, 1), derive_seed(seed, 2), ckpt.arch)
    shuffle_rng = Rng(derive_seed(seed, 3))
    params = ckpt.params
    n_updates = math.ceil(phase_steps / config.n_steps)
    for _ in range(n_updates):
        batch, _ = worker.collect(params, config.n_steps)
        advantages, returns = compute_gae(batch, config.gamma, config.gae_lambda)
        if config.algo == "a2c":
            params, _ = a2c_update(params, ckpt.arch, batch, advantages, returns, config)
        else:
            params, _ = ppo_update(
                params, ckpt.arch, batch, advantages, returns, config, shuffle_rng
            )
    return params


def _experiment_checkpoint_task(args):
    (group, ckpt_path, algo, learning_rate, n_steps, trials, eval_episodes,
     seed, ck_idx, a2c_rollout, gamma, max_grad_norm, value_coef) = args
    ckpt = nets.load_checkpoint(ckpt_path)
    rollout = n_steps if algo == "ppo" else min(a2c_rollout, n_steps)
    config = TrainConfig(
        algo=algo,
        learning_rate=learning_rate,
        n_steps=rollout,
        total_steps=n_steps,
        checkpoint_interval=n_steps,
        seed=0,
        gamma=gamma,
        max_grad_norm=max_grad_norm,
        value_coef=value_coef,
    )
    rows = []
    for trial in range(trials):
        before = evaluate_params(
            ckpt.params, ckpt.arch, ckpt.env,
            EvalBudget(min_steps=1, min_episodes=eval_episodes,
                       seed=derive_seed(seed, ck_idx, trial, 0)),
        )
        new_params = train_phase_from_checkpoint(
            ckpt, config, n_steps, derive_seed(seed, ck_idx, trial, 1)
        )
        after = evaluate_params(
            new_params, ckpt.arch, ckpt.env,
            EvalBudget(min_steps=1, min_episodes=eval_episodes,
                       seed=derive_seed(seed, ck_idx, trial, 2)),
        )
        rows.append(
            ExperimentRow(
                algo=algo,
                learning_rate=learning_rate,
                n_steps=n_steps,
                group=group,
                env=ckpt.env,
                checkpoint_step=ckpt.train_step,
                trial=trial,
                before_mean=before.mean,
                before_stderr=before.stderr,
                after_mean=after.mean,
                after_stderr=after.stderr,
                percent_change=percent_change(before.mean, after.mean),
            )
        )
    return rows


def run_cliff_experiment(
    cliff_ckpts: list[str],
    noncliff_ckpts: list[str],
    algo: str,
    learning_rate: float,
    n_steps: int,
    trials: int,
    eval_episodes: int,
    seed: int = 0,
    workers: int = 1,
    a2c_rollout: int = 64,
    gamma: float = 0.99,
    max_grad_norm: float = 0.5,
    value_coef: float = 0.5,
) -> ExperimentTable:
    """Percent change in return after one training phase, per checkpoint and
    trial, for the cliff and non-cliff groups. Checkpoint arguments are paths."""
    if not cliff_ckpts or not noncliff_ckpts:
        raise ValueError("both checkpoint groups must be non-empty")
    if algo not in ("a2c", "ppo"):
        raise ValueError(f"unknown algo {algo!r}")
    tasks = []
    ck_idx = 0
    for group, paths in (("cliff", cliff_ckpts), ("non_cliff", noncliff_ckpts)):
        for path in paths:
            tasks.append(
                (group, str(path), algo, learning_rate, n_steps, trials, eval_episodes,
                 seed, ck_idx, a2c_rollout, gamma, max_grad_norm, value_coef)
            )
            ck_idx += 1
    rows: list[ExperimentRow] = []
    for chunk in parallel_map(_experiment_checkpoint_task, tasks, workers):
        rows.extend(chunk)
    return ExperimentTable(rows)


def select_cliff_sets(
    entries: list[tuple[LineSearchResult, "object"]],
    criteria: CliffCriteria,
    n_cliff: int,
    n_non_cliff: int,
) -> tuple[list[str], list[str]]:
    """Pick cliff and non-cliff checkpoint paths from pooled line searches.

    Candidates in each group are ranked by the percentile of their unperturbed
    (offset-0) return within their own run, so well-performing checkpoints are
    preferred and runs on different reward scales pool fairly; ties prefer
    later training steps.
    """
    cliff_pool = []
    non_pool = []
    for result, run in entries:
        report = detect_cliffs(result, criteria)
        origins = {
            line.step: line.samples[0].stat.mean for line in result.checkpoints
        }
        values = sorted(origins.values())
        n = len(values)
        for c in report.checkpoints:
            rank = sum(1 for v in values if v <= origins[c.step])
            percentile = rank / n
            entry = (percentile, c.step, str(run.checkpoint_path(c.step)))
            (cliff_pool if c.is_cliff else non_pool).append(entry)
    cliff_pool.sort(key=lambda t: (t[0], t[1]), reverse=True)
    non_pool.sort(key=lambda t: (t[0], t[1]), reverse=True)
    if len(cliff_pool) < n_cliff or len(non_pool) < n_non_cliff:
        raise ValueError(
            f"not enough checkpoints: {len(cliff_pool)} cliff / {len(non_pool)} non-cliff found"
        )
    return (
        [p for _, _, p in cliff_pool[:n_cliff]],
        [p for _, _, p in non_pool[:n_non_cliff]],
    )


def write_experiment_csv(path, table: ExperimentTable) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {EXPERIMENT_CSV_SCHEMA}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algo", "lr", "n_steps", "group", "mean_percent_change", "trials"])
        for (algo, lr, n_steps, group), (mean_pct, count) in sorted(table.group_means().items()):
            writer.writerow(
                [algo, format(lr, ".17g"), n_steps, group, format(mean_pct, ".17g"), count]
            )


def write_experiment_detail_csv(path, table: ExperimentTable) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {EXPERIMENT_DETAIL_CSV_SCHEMA}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["algo", "lr", "n_steps", "group", "env", "checkpoint_step", "trial",
             "before_mean", "before_stderr", "after_mean", "after_stderr", "percent_change"]
        )
        for r in table.rows:
            writer.writerow(
                [r.algo, format(r.learning_rate, ".17g"), r.n_steps, r.group, r.env,
                 r.checkpoint_step, r.trial, format(r.before_mean, ".17g"),
                 format(r.before_stderr, ".17g"), format(r.after_mean, ".17g"),
                 format(r.after_stderr, ".17g"), format(r.percent_change, ".17g")]
            )

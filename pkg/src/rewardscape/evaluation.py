"""Monte-Carlo policy evaluation and the parallel reward-surface grid engine.

Every grid cell evaluates the perturbed policy with a private RNG stream
derived from (budget seed, flattened cell index), so results are identical
no matter how many workers run the grid. Episodes always run to completion;
the statistics cover complete episodes only.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nets
from .envs import Box, EnvSpec, get_spec, make_env
from .directions import Direction
from .nets import Architecture, Checkpoint, ParameterVector
from .rng import Rng, derive_seed

SURFACE_CSV_SCHEMA = "surface.v1"
SURFACE_JSON_SCHEMA = "surface-manifest.v1"


@dataclass(frozen=True)
class EvalBudget:
    min_steps: int
    min_episodes: int = 1
    gamma_eval: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.min_steps < 1:
            raise ValueError("min_steps must be >= 1")
        if self.min_episodes < 1:
            raise ValueError("min_episodes must be >= 1")


@dataclass(frozen=True)
class EvalStatistic:
    mean: float
    std: float
    stderr: float
    episodes: int
    steps: int

    @property
    def single_episode(self) -> bool:
        """True when std/stderr are reported as 0 because only one episode ran."""
        return self.episodes == 1

    @classmethod
    def from_returns(cls, returns, steps: int) -> "EvalStatistic":
        returns = np.asarray(returns, dtype=np.float64)
        n = returns.size
        mean = float(returns.mean())
        if n < 2:
            return cls(mean, 0.0, 0.0, n, steps)
        std = float(returns.std(ddof=1))
        return cls(mean, std, std / math.sqrt(n), n, steps)


def run_episode(params, arch, env, act_rng, gamma_eval=1.0, deterministic=False):
    """One complete episode; returns (discounted return, steps)."""
    action_space = env.spec.action_space
    clip_box = isinstance(action_space, Box)
    obs = env.reset()
    total = 0.0
    disc = 1.0
    steps = 0
    while True:
        dist, _ = nets.forward(params, arch, obs)
        if deterministic:
            action = nets.mode_action(dist)
        else:
            action, _ = nets.sample_action(dist, act_rng)
        tr = env.step(action_space.clip(action) if clip_box else action)
        total += disc * tr.reward
        disc *= gamma_eval
        steps += 1
        obs = tr.observation
        if tr.done:
            return total, steps


def evaluate_on_env(params, arch, env, act_rng, budget: EvalBudget, deterministic=False) -> EvalStatistic:
    """Complete episodes on a live env until both ``min_steps`` and
    ``min_episodes`` are satisfied (the last episode is kept even when it
    crosses the step threshold)."""
    returns = []
    steps = 0
    while steps < budget.min_steps or len(returns) < budget.min_episodes:
        ep_return, ep_steps = run_episode(
            params, arch, env, act_rng, budget.gamma_eval, deterministic
        )
        returns.append(ep_return)
        steps += ep_steps
    return EvalStatistic.from_returns(returns, steps)


def evaluate_params(
    params: ParameterVector,
    arch: Architecture,
    env_spec: EnvSpec | str,
    budget: EvalBudget,
    deterministic: bool = False,
) -> EvalStatistic:
    """Stochastic-policy evaluation with env and action streams derived from
    the budget seed."""
    spec = get_spec(env_spec) if isinstance(env_spec, str) else env_spec
    env = make_env(spec, derive_seed(budget.seed, 1))
    act_rng = Rng(derive_seed(budget.seed, 2))
    return evaluate_on_env(params, arch, env, act_rng, budget, deterministic)


def evaluate(ckpt: Checkpoint, budget: EvalBudget, env_spec=None, deterministic=False) -> EvalStatistic:
    spec = ckpt.env_spec if env_spec is None else env_spec
    return evaluate_params(ckpt.params, ckpt.arch, spec, budget, deterministic)


# --- surface grids ------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    range: float
    samples_per_axis: int
    budget: EvalBudget

    def __post_init__(self):
        if self.range <= 0:
            raise ValueError("range must be positive")
        if self.samples_per_axis < 1 or self.samples_per_axis % 2 == 0:
            raise ValueError("samples_per_axis must be a positive odd integer")

    def offsets(self) -> np.ndarray:
        """Symmetric lattice [-R, R] with an exact 0 at the center."""
        n = self.samples_per_axis
        if n == 1:
            return np.zeros(1)
        c = (n - 1) // 2
        step = self.range / c
        return np.array([(k - c) * step for k in range(n)])

    def to_dict(self) -> dict:
        return {
            "range": self.range,
            "samples_per_axis": self.samples_per_axis,
            "budget": {
                "min_steps": self.budget.min_steps,
                "min_episodes": self.budget.min_episodes,
                "gamma_eval": self.budget.gamma_eval,
                "seed": self.budget.seed,
            },
        }


@dataclass
class SurfaceGrid:
    spec: GridSpec
    alphas: np.ndarray
    betas: np.ndarray
    cells: list[list[EvalStatistic]]
    directions: list[dict]
    checkpoint_ref: str

    def cell(self, i: int, j: int) -> EvalStatistic:
        return self.cells[i][j]

    @property
    def center(self) -> EvalStatistic:
        c = (self.spec.samples_per_axis - 1) // 2
        return self.cells[c][c]

    def means(self) -> np.ndarray:
        return np.array([[s.mean for s in row] for row in self.cells])


def _eval_cell(args):
    (index, params_blocks, shapes, arch, spec_name, alpha, beta,
     d1_blocks, d2_blocks, budget) = args
    params = ParameterVector(params_blocks)
    theta = [b.copy() for b in params.blocks]
    for k in range(len(theta)):
        theta[k] += alpha * d1_blocks[k]
        if d2_blocks is not None:
            theta[k] += beta * d2_blocks[k]
    stat = evaluate_params(ParameterVector(theta), arch, spec_name, budget)
    return index, stat


def parallel_map(fn, items, workers: int):
    """Order-preserving map, inline for one worker, process pool otherwise."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=min(workers, len(items))) as pool:
        return pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers)))


def evaluate_grid(
    ckpt: Checkpoint,
    d1: Direction,
    d2: Direction,
    spec: GridSpec,
    workers: int = 1,
) -> SurfaceGrid:
    """Evaluate theta + alpha*d1 + beta*d2 over the full offset lattice.

    Cell (i, j) evaluates with seed derive(budget.seed, i*N + j); the output
    is bit-identical for any worker count.
    """
    offsets = spec.offsets()
    n = spec.samples_per_axis
    tasks = []
    for i in range(n):
        for j in range(n):
            cell_budget = replace(spec.budget, seed=derive_seed(spec.budget.seed, i * n + j))
            tasks.append(
                (i * n + j, ckpt.params.blocks, ckpt.params.shapes(), ckpt.arch,
                 ckpt.env, float(offsets[i]), float(offsets[j]),
                 d1.blocks, d2.blocks if d2 is not None else None, cell_budget)
            )
    results = parallel_map(_eval_cell, tasks, workers)
    cells: list[list[EvalStatistic]] = [[None] * n for _ in range(n)]  # type: ignore[list-item]
    for index, stat in results:
        cells[index // n][index % n] = stat
    return SurfaceGrid(
        spec=spec,
        alphas=offsets,
        betas=offsets.copy(),
        cells=cells,
        directions=[
            {"kind": d1.kind, "seed_or_source": d1.seed_or_source},
            {"kind": d2.kind, "seed_or_source": d2.seed_or_source} if d2 is not None else None,
        ],
        checkpoint_ref=ckpt.path or "<in-memory>",
    )


# --- export -------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_surface_csv(path, grid: SurfaceGrid) -> None:
    n = grid.spec.samples_per_axis
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {SURFACE_CSV_SCHEMA}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "alpha", "beta", "mean", "std", "stderr", "episodes", "steps"])
        for i in range(n):
            for j in range(n):
                s = grid.cells[i][j]
                writer.writerow(
                    [i, j, _fmt(grid.alphas[i]), _fmt(grid.betas[j]), _fmt(s.mean),
                     _fmt(s.std), _fmt(s.stderr), s.episodes, s.steps]
                )


def write_surface_manifest(path, grid: SurfaceGrid, version: str) -> None:
    doc = {
        "schema": SURFACE_JSON_SCHEMA,
        "checkpoint": grid.checkpoint_ref,
        "directions": grid.directions,
        "grid": grid.spec.to_dict(),
        "version": version,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def read_surface_csv(path):
    """Returns (header row, list of parsed rows). Rejects unknown schemas."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema: {SURFACE_CSV_SCHEMA}":
            raise ValueError(f"unsupported surface schema line {first!r}")
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for row in reader:
            rows.append(
                {
                    "i": int(row[0]),
                    "j": int(row[1]),
                    "alpha": float(row[2]),
                    "beta": float(row[3]),
                    "mean": float(row[4]),
                    "std": float(row[5]),
                    "stderr": float(row[6]),
                    "episodes": int(row[7]),
                    "steps": int(row[8]),
                }
            )
    return header, rows

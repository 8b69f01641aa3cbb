"""A2C and PPO training with GAE, plain-SGD steps, and periodic checkpoints.

The optimizer is deliberately a fixed-step gradient descent: checkpoints then
carry no optimizer state, so any later analysis can restart training from a
checkpoint and reproduce exactly one update phase. A single environment
instance collects rollouts of ``n_steps`` transitions; episodes continue
across update boundaries.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import nets
from .envs import Box, EnvSpec, get_spec, make_env
from .nets import Architecture, Checkpoint, ParameterVector
from .rng import Rng, derive_seed

RUN_SCHEMA = "run.v1"
LOG_CSV_SCHEMA = "trainlog.v1"


class TrainingDiverged(ArithmeticError):
    """Non-finite loss or gradient during an update."""


@dataclass
class TrainConfig:
    algo: str
    learning_rate: float
    n_steps: int
    total_steps: int
    checkpoint_interval: int
    seed: int
    gamma: float = 0.99
    gae_lambda: float | None = None  # default 0.95 for ppo, 1.0 for a2c
    ppo_epochs: int = 10
    ppo_clip: float = 0.2
    minibatch_count: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    normalize_advantages: bool | None = None  # default True for ppo, False for a2c

    def __post_init__(self):
        if self.algo not in ("a2c", "ppo"):
            raise ValueError(f"unknown algo {self.algo!r}")
        if self.checkpoint_interval > self.total_steps:
            raise ValueError("checkpoint_interval must be <= total_steps")
        if self.gae_lambda is None:
            self.gae_lambda = 0.95 if self.algo == "ppo" else 1.0
        if self.normalize_advantages is None:
            self.normalize_advantages = self.algo == "ppo"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RolloutBatch:
    observations: np.ndarray  # (n, obs_dim)
    actions: np.ndarray  # (n,) int or (n, act_dim) float
    log_probs: np.ndarray  # (n,)
    rewards: np.ndarray  # (n,)
    dones: np.ndarray  # (n,) bool
    value_estimates: np.ndarray  # (n,)
    bootstrap_value: float

    def __len__(self) -> int:
        return len(self.rewards)


def compute_gae(batch: RolloutBatch, gamma: float, lam: float):
    """delta_t = r_t + gamma*V(s_{t+1})*(1-done_t) - V(s_t);
    A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1}; returns = A + V."""
    n = len(batch)
    adv = np.empty(n, dtype=np.float64)
    next_value = batch.bootstrap_value
    acc = 0.0
    for t in range(n - 1, -1, -1):
        not_done = 0.0 if batch.dones[t] else 1.0
        delta = batch.rewards[t] + gamma * next_value * not_done - batch.value_estimates[t]
        acc = delta + gamma * lam * not_done * acc
        adv[t] = acc
        next_value = batch.value_estimates[t]
    return adv, adv + batch.value_estimates


class RolloutWorker:
    """Owns one environment and the action-sampling stream; episodes persist
    across collect() calls."""

    def __init__(self, env_spec: EnvSpec, env_seed: int, action_seed: int, arch: Architecture):
        self.spec = env_spec
        self.env = make_env(env_spec, env_seed)
        self.act_rng = Rng(action_seed)
        self.arch = arch
        self._clip_box = isinstance(env_spec.action_space, Box)
        self._obs = self.env.reset()
        self._ep_return = 0.0

    def collect(self, params: ParameterVector, n_steps: int):
        """Returns (RolloutBatch, undiscounted returns of episodes completed)."""
        obs_buf, act_buf, logp_buf, rew_buf, done_buf, val_buf = [], [], [], [], [], []
        completed = []
        obs = self._obs
        for _ in range(n_steps):
            dist, value = nets.forward(params, self.arch, obs)
            action, logp = nets.sample_action(dist, self.act_rng)
            tr = self.env.step(
                self.spec.action_space.clip(action) if self._clip_box else action
            )
            obs_buf.append(obs)
            act_buf.append(action)
            logp_buf.append(logp)
            rew_buf.append(tr.reward)
            done_buf.append(tr.done)
            val_buf.append(value)
            self._ep_return += tr.reward
            if tr.done:
                completed.append(self._ep_return)
                self._ep_return = 0.0
                obs = self.env.reset()
            else:
                obs = tr.observation
        self._obs = obs
        _, bootstrap = nets.forward(params, self.arch, obs)
        if isinstance(self.arch.head, nets.CategoricalHead):
            actions = np.asarray(act_buf, dtype=np.int64)
        else:
            actions = np.asarray(act_buf, dtype=np.float64).reshape(n_steps, -1)
        batch = RolloutBatch(
            observations=np.asarray(obs_buf, dtype=np.float64),
            actions=actions,
            log_probs=np.asarray(logp_buf, dtype=np.float64),
            rewards=np.asarray(rew_buf, dtype=np.float64),
            dones=np.asarray(done_buf, dtype=bool),
            value_estimates=np.asarray(val_buf, dtype=np.float64),
            bootstrap_value=bootstrap,
        )
        return batch, completed


def _batch_log_probs_and_entropy(arch, out, log_std, actions):
    if isinstance(arch.head, nets.CategoricalHead):
        z = out - out.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        logp = z[np.arange(len(actions)), actions] - lse
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        ent = -(p * np.log(p)).sum(axis=1)
        return logp, ent
    std = np.exp(log_std)
    t = (actions - out) / std
    logp = -0.5 * (t * t).sum(axis=1) - log_std.sum() - 0.5 * nets.LOG_2PI * actions.shape[1]
    ent = np.full(len(actions), log_std.sum() + 0.5 * (1.0 + nets.LOG_2PI) * log_std.size)
    return logp, ent


def _policy_head_grads(arch, params, out, actions):
    """(d logp/d out, d logp/d log_std, dH/d out, dH/d log_std) per sample."""
    if isinstance(arch.head, nets.CategoricalHead):
        dlogp = nets.categorical_logprob_grad(out, actions)
        dent = nets.categorical_entropy_grad(out)
        return dlogp, None, dent, None
    log_std = params.blocks[-1]
    d_mean, d_ls = nets.gaussian_logprob_grads(out, log_std, actions)
    return d_mean, d_ls, np.zeros_like(out), np.ones_like(log_std)


def _clipped_step(params, grad, learning_rate, max_grad_norm):
    gnorm = grad.norm()
    scale = learning_rate
    if max_grad_norm > 0 and gnorm > max_grad_norm:
        scale = learning_rate * max_grad_norm / gnorm
    new_blocks = [b - scale * g for b, g in zip(params.blocks, grad.blocks)]
    return ParameterVector(new_blocks), gnorm


def a2c_update(params, arch, batch, advantages, returns, config):
    """One SGD step on
    -mean(logp * A) + value_coef * MSE(V, returns) - entropy_coef * mean(H)."""
    n = len(batch)
    adv = np.asarray(advantages, dtype=np.float64)
    if config.normalize_advantages:
        adv = _normalize(adv)
    out, values = nets.forward_batch(params, arch, batch.observations)
    log_std = params.blocks[-1] if nets.has_log_std(arch) else None
    logp, ent = _batch_log_probs_and_entropy(arch, out, log_std, batch.actions)
    policy_loss = -float(np.dot(logp, adv)) / n
    value_loss = float(np.mean((values - returns) ** 2))
    entropy_mean = float(ent.mean())
    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy_mean
    if not math.isfinite(loss):
        raise TrainingDiverged(
            f"a2c loss non-finite: policy={policy_loss} value={value_loss} entropy={entropy_mean}"
        )
    dlogp, dls_logp, dent, dls_ent = _policy_head_grads(arch, params, out, batch.actions)
    d_out = (-adv[:, None] / n) * dlogp - (config.entropy_coef / n) * dent
    d_log_std = None
    if dls_logp is not None:
        d_log_std = (
            (-adv[:, None] / n) * dls_logp
        ).sum(axis=0) - config.entropy_coef * dls_ent
    d_value = config.value_coef * 2.0 * (values - returns) / n
    grad = nets.backward_batch(params, arch, batch.observations, d_out, d_value, d_log_std)
    new_params, gnorm = _clipped_step(params, grad, config.learning_rate, config.max_grad_norm)
    stats = {
        "loss": loss,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy_mean,
        "grad_norm": gnorm,
    }
    return new_params, stats


def _normalize(adv: np.ndarray) -> np.ndarray:
    """Exact unit-std normalization (no epsilon) so the post-normalization
    moments are 0 and 1 to machine precision; degenerate batches are only
    centered."""
    centered = adv - adv.mean()
    std = centered.std()
    if std > 0.0:
        centered = centered / std
    return centered


def clipped_surrogate_term(ratio: float, advantage: float, clip: float) -> float:
    """Per-sample PPO objective contribution min(rho*A, clip(rho)*A)."""
    clipped = min(max(ratio, 1.0 - clip), 1.0 + clip)
    return min(ratio * advantage, clipped * advantage)


def ppo_update(params, arch, batch, advantages, returns, config, shuffle_rng: Rng):
    """ppo_epochs passes of minibatch ascent on the clipped surrogate."""
    adv = np.asarray(advantages, dtype=np.float64)
    if config.normalize_advantages:
        adv = _normalize(adv)
    n = len(batch)
    idx = np.arange(n)
    stats_acc = {"loss": 0.0, "policy_objective": 0.0, "value_loss": 0.0,
                 "entropy": 0.0, "clip_fraction": 0.0, "grad_norm": 0.0}
    n_minibatches = 0
    log_std_idx = -1 if nets.has_log_std(arch) else None
    for _ in range(config.ppo_epochs):
        shuffle_rng.shuffle(idx)
        for mb in np.array_split(idx, config.minibatch_count):
            if len(mb) == 0:
                continue
            m = len(mb)
            obs = batch.observations[mb]
            actions = batch.actions[mb]
            out, values = nets.forward_batch(params, arch, obs)
            log_std = params.blocks[-1] if log_std_idx is not None else None
            logp, ent = _batch_log_probs_and_entropy(arch, out, log_std, actions)
            ratio = np.exp(logp - batch.log_probs[mb])
            a = adv[mb]
            surr1 = ratio * a
            surr2 = np.clip(ratio, 1.0 - config.ppo_clip, 1.0 + config.ppo_clip) * a
            objective = float(np.minimum(surr1, surr2).mean())
            value_loss = float(np.mean((values - returns[mb]) ** 2))
            entropy_mean = float(ent.mean())
            loss = -objective + config.value_coef * value_loss - config.entropy_coef * entropy_mean
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"ppo loss non-finite: objective={objective} value={value_loss}"
                )
            active = surr1 <= surr2  # unclipped branch carries the gradient
            pg_coef = np.where(active, ratio * a, 0.0) / m
            dlogp, dls_logp, dent, dls_ent = _policy_head_grads(arch, params, out, actions)
            d_out = -pg_coef[:, None] * dlogp - (config.entropy_coef / m) * dent
            d_log_std = None
            if dls_logp is not None:
                d_log_std = (
                    -pg_coef[:, None] * dls_logp
                ).sum(axis=0) - config.entropy_coef * dls_ent
            d_value = config.value_coef * 2.0 * (values - returns[mb]) / m
            grad = nets.backward_batch(params, arch, obs, d_out, d_value, d_log_std)
            params, gnorm = _clipped_step(params, grad, config.learning_rate, config.max_grad_norm)
            stats_acc["loss"] += loss
            stats_acc["policy_objective"] += objective
            stats_acc["value_loss"] += value_loss
            stats_acc["entropy"] += entropy_mean
            stats_acc["clip_fraction"] += float((~active).mean())
            stats_acc["grad_norm"] += gnorm
            n_minibatches += 1
    stats = {k: v / max(1, n_minibatches) for k, v in stats_acc.items()}
    return params, stats


# --- run directories ----------------------------------------------------------


class RunDirectory:
    """Layout: run.json, checkpoints/step_<N>.json, log.csv."""

    def __init__(self, path):
        self.path = Path(path)

    @property
    def checkpoints_dir(self) -> Path:
        return self.path / "checkpoints"

    def checkpoint_steps(self) -> list[int]:
        steps = []
        for p in self.checkpoints_dir.glob("step_*.json"):
            steps.append(int(p.stem.split("_")[1]))
        return sorted(steps)

    def checkpoint_path(self, step: int) -> Path:
        return self.checkpoints_dir / f"step_{step}.json"

    def load_checkpoint(self, step: int) -> Checkpoint:
        return nets.load_checkpoint(self.checkpoint_path(step))

    def config(self) -> dict:
        return json.loads((self.path / "run.json").read_text())


def _write_log_csv(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {LOG_CSV_SCHEMA}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "mean_return", "episodes"])
        for step, mean_return, episodes in rows:
            writer.writerow([step, format(mean_return, ".17g"), episodes])


def train(
    env_spec: EnvSpec | str,
    arch: Architecture,
    config: TrainConfig,
    out_dir,
    version: str = "0",
) -> RunDirectory:
    """Run the rollout/update loop for ``total_steps`` environment steps,
    checkpointing at step 0, every ``checkpoint_interval`` steps, and at the
    end. Fully deterministic in ``config.seed``."""
    spec = get_spec(env_spec) if isinstance(env_spec, str) else env_spec
    run = RunDirectory(out_dir)
    run.path.mkdir(parents=True, exist_ok=True)
    run.checkpoints_dir.mkdir(exist_ok=True)

    params = nets.init_params(arch, spec.obs_dim, derive_seed(config.seed, 0))
    worker = RolloutWorker(spec, derive_seed(config.seed, 1), derive_seed(config.seed, 2), arch)
    shuffle_rng = Rng(derive_seed(config.seed, 3))

    (run.path / "run.json").write_text(
        json.dumps(
            {
                "schema": RUN_SCHEMA,
                "env": spec.name,
                "architecture": arch.to_dict(),
                "config": config.to_dict(),
                "version": version,
            },
            sort_keys=True,
            indent=1,
        )
    )

    def save(step: int):
        ckpt = Checkpoint(params, arch, spec.name, config.algo, step, config.seed)
        nets.save_checkpoint(run.checkpoint_path(step), ckpt)

    save(0)
    log_rows = []
    steps_done = 0
    next_ckpt = config.checkpoint_interval
    while steps_done < config.total_steps:
        batch, completed = worker.collect(params, config.n_steps)
        steps_done += config.n_steps
        advantages, returns = compute_gae(batch, config.gamma, config.gae_lambda)
        if config.algo == "a2c":
            params, _ = a2c_update(params, arch, batch, advantages, returns, config)
        else:
            params, _ = ppo_update(params, arch, batch, advantages, returns, config, shuffle_rng)
        if completed:
            log_rows.append((steps_done, float(np.mean(completed)), len(completed)))
        if steps_done >= next_ckpt:
            save(steps_done)
            next_ckpt = (steps_done // config.checkpoint_interval + 1) * config.checkpoint_interval
    if not run.checkpoint_path(steps_done).exists():
        save(steps_done)
    _write_log_csv(run.path / "log.csv", log_rows)
    return run


def _argmax_prefer_later(means) -> int:
    """Index of the maximum; equal values resolve to the later position."""
    best = 0
    for i, m in enumerate(means):
        if m >= means[best]:
            best = i
    return best


def select_best_checkpoint(run: RunDirectory, episodes: int = 25, seed: int = 0) -> Checkpoint:
    """Checkpoint with the best mean return over ``episodes`` episodes; ties
    prefer the later training step."""
    from .evaluation import EvalBudget, evaluate  # local import to avoid cycle

    steps = run.checkpoint_steps()
    if not steps:
        raise ValueError(f"run {run.path} has no checkpoints")
    means = []
    for k, step in enumerate(steps):
        ckpt = run.load_checkpoint(step)
        stat = evaluate(ckpt, EvalBudget(min_steps=1, min_episodes=episodes, seed=derive_seed(seed, k)))
        means.append(stat.mean)
    return run.load_checkpoint(steps[_argmax_prefer_later(means)])

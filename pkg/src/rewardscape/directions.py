"""Direction algebra over parameter vectors.

A direction shares its block layout with the parameter vector it perturbs.
Filter-normalized random directions rescale each filter of an i.i.d. Gaussian
draw to the norm of the matching filter of theta; gradient directions are
normalized by their global L2 norm. Directions serialize in the same base64
block format as checkpoints so plots can be regenerated exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nets
from .envs import Box, get_spec, make_env
from .nets import Architecture, Checkpoint, ParameterVector
from .rng import Rng, derive_seed

FILTER_NORMALIZED = "filter_normalized"
L2_NORMALIZED_GRADIENT = "l2_normalized_gradient"
RAW = "raw"


class ZeroVectorError(ValueError):
    """L2 normalization of an all-zero vector; caller decides the fallback."""


@dataclass
class Direction:
    blocks: list[np.ndarray]
    kind: str
    seed_or_source: dict

    def shapes(self):
        return [b.shape for b in self.blocks]

    def norm(self) -> float:
        return math.sqrt(sum(float(np.dot(b.ravel(), b.ravel())) for b in self.blocks))


def _filter_views(blocks: list[np.ndarray], arch: Architecture):
    """Yield per-filter views as lists of 1-D slices sharing memory with
    ``blocks``: (weight row, bias element) per output neuron, the log-std
    vector as one pseudo-filter."""
    for wi, bi in nets.linear_pairs(arch):
        w, b = blocks[wi], blocks[bi]
        for j in range(w.shape[0]):
            yield (w[j], b[j : j + 1])
    li = nets.log_std_index(arch)
    if li is not None:
        yield (blocks[li],)


def _slice_norm(parts) -> float:
    return math.sqrt(sum(float(np.dot(p, p)) for p in parts))


def sample_filter_normalized_direction(
    theta: ParameterVector, arch: Architecture, seed: int
) -> Direction:
    """Gaussian direction with each filter rescaled to the matching filter
    norm of ``theta``; filters where either norm vanishes become zero."""
    rng = Rng(seed)
    raw = []
    for b in theta.blocks:
        block = np.empty(b.size, dtype=np.float64)
        for i in range(b.size):
            block[i] = rng.normal()
        raw.append(block.reshape(b.shape))
    for d_parts, t_parts in zip(_filter_views(raw, arch), _filter_views(theta.blocks, arch)):
        t_norm = _slice_norm(t_parts)
        d_norm = _slice_norm(d_parts)
        if t_norm == 0.0 or d_norm == 0.0:
            for p in d_parts:
                p[:] = 0.0
        else:
            scale = t_norm / d_norm
            for p in d_parts:
                p *= scale
    return Direction(raw, FILTER_NORMALIZED, {"seed": int(seed)})


def l2_normalize(v: ParameterVector | Direction, source: dict | None = None) -> Direction:
    """Divide every component by the global L2 norm across all blocks."""
    blocks = v.blocks
    norm = math.sqrt(sum(float(np.dot(b.ravel(), b.ravel())) for b in blocks))
    if norm == 0.0:
        raise ZeroVectorError("cannot L2-normalize a zero vector")
    out = [b / norm for b in blocks]
    return Direction(out, L2_NORMALIZED_GRADIENT, dict(source or {}))


def perturb(
    theta: ParameterVector,
    d1: Direction,
    alpha: float,
    d2: Direction | None = None,
    beta: float = 0.0,
) -> ParameterVector:
    """theta + alpha * d1 (+ beta * d2); inputs are left untouched."""
    if [tuple(s) for s in theta.shapes()] != [tuple(s) for s in d1.shapes()]:
        raise nets.ShapeError("direction d1 does not match parameter shapes")
    if d2 is not None and [tuple(s) for s in theta.shapes()] != [tuple(s) for s in d2.shapes()]:
        raise nets.ShapeError("direction d2 does not match parameter shapes")
    blocks = []
    for i, b in enumerate(theta.blocks):
        nb = b + alpha * d1.blocks[i]
        if d2 is not None:
            nb = nb + beta * d2.blocks[i]
        blocks.append(nb)
    return ParameterVector(blocks)


def estimate_policy_gradient(
    checkpoint: Checkpoint,
    total_env_steps: int,
    gamma: float,
    seed: int,
    env_spec=None,
) -> ParameterVector:
    """Monte-Carlo estimate of the objective gradient.

    Runs complete episodes until the step budget is met; each timestep
    contributes grad log pi(a_t|s_t) weighted by the discounted reward-to-go
    minus the checkpoint's value prediction, and the sum is averaged over
    episodes.
    """
    spec = get_spec(checkpoint.env) if env_spec is None else env_spec
    env = make_env(spec, derive_seed(seed, 1))
    return _estimate_gradient_on_env(checkpoint.params, checkpoint.arch, env, spec.action_space,
                                     total_env_steps, gamma, derive_seed(seed, 2))


def _estimate_gradient_on_env(
    params: ParameterVector,
    arch: Architecture,
    env,
    action_space,
    total_env_steps: int,
    gamma: float,
    action_seed: int,
) -> ParameterVector:
    act_rng = Rng(action_seed)
    clip_box = isinstance(action_space, Box)
    grad_sum = ParameterVector.zeros(params.shapes())
    episodes = 0
    steps = 0
    while steps < total_env_steps:
        obs_list, actions, rewards, values = [], [], [], []
        obs = env.reset()
        while True:
            dist, value = nets.forward(params, arch, obs)
            action, _ = nets.sample_action(dist, act_rng)
            obs_list.append(obs)
            actions.append(action)
            values.append(value)
            tr = env.step(action_space.clip(action) if clip_box else action)
            rewards.append(tr.reward)
            obs = tr.observation
            if tr.done:
                break
        steps += len(rewards)
        episodes += 1
        rtg = np.empty(len(rewards))
        acc = 0.0
        for t in range(len(rewards) - 1, -1, -1):
            acc = rewards[t] + gamma * acc
            rtg[t] = acc
        adv = rtg - np.asarray(values)
        obs_mat = np.asarray(obs_list)
        out, _ = nets.forward_batch(params, arch, obs_mat)
        if isinstance(arch.head, nets.CategoricalHead):
            d_out = adv[:, None] * nets.categorical_logprob_grad(out, np.asarray(actions))
            d_log_std = None
        else:
            a_mat = np.asarray(actions, dtype=np.float64).reshape(len(actions), -1)
            d_mean, d_ls = nets.gaussian_logprob_grads(out, params.blocks[-1], a_mat)
            d_out = adv[:, None] * d_mean
            d_log_std = (adv[:, None] * d_ls).sum(axis=0)
        g = nets.backward_batch(params, arch, obs_mat, d_out, np.zeros(len(actions)), d_log_std)
        for i, b in enumerate(g.blocks):
            grad_sum.blocks[i] += b
    return ParameterVector([b / episodes for b in grad_sum.blocks])


# --- persistence --------------------------------------------------------------

DIRECTION_SCHEMA = "direction.v1"


def save_direction(path, direction: Direction) -> None:
    doc = {
        "schema": DIRECTION_SCHEMA,
        "kind": direction.kind,
        "seed_or_source": direction.seed_or_source,
        "blocks": [nets._encode_block(b) for b in direction.blocks],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_direction(path) -> Direction:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != DIRECTION_SCHEMA:
        raise ValueError(f"unsupported direction schema {doc.get('schema')!r}")
    return Direction(
        [nets._decode_block(b) for b in doc["blocks"]],
        doc["kind"],
        doc["seed_or_source"],
    )

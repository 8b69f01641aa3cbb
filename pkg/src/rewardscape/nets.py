"""Small MLP actor-critic with hand-written forward and backward passes.

Parameters live in a :class:`ParameterVector`: an ordered list of float64
blocks, weight/bias pairs per linear layer plus one trailing log-std vector
for Gaussian heads. Filter j of a linear layer is row j of its weight matrix
together with bias j; a log-std vector counts as a single pseudo-filter.
All math is plain numpy, no autodiff.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import Box, Discrete, EnvSpec, get_spec
from .rng import Rng

LOG_2PI = math.log(2.0 * math.pi)


class ShapeError(ValueError):
    """Input or parameter shapes inconsistent with the architecture."""


class NumericalError(ArithmeticError):
    """Non-finite value encountered in a forward or backward pass."""


@dataclass(frozen=True)
class CategoricalHead:
    n: int


@dataclass(frozen=True)
class GaussianHead:
    dim: int


@dataclass(frozen=True)
class Architecture:
    """Network shape. ``head`` must match the environment's action space."""

    hidden_sizes: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    shared_trunk: bool = True
    head: CategoricalHead | GaussianHead = field(default_factory=lambda: CategoricalHead(2))

    def __post_init__(self):
        if not self.hidden_sizes or any(h <= 0 for h in self.hidden_sizes):
            raise ShapeError("hidden_sizes must be a non-empty tuple of positive ints")
        if self.activation != "tanh":
            raise ShapeError(f"unsupported activation {self.activation!r}")

    @property
    def head_dim(self) -> int:
        return self.head.n if isinstance(self.head, CategoricalHead) else self.head.dim

    def to_dict(self) -> dict:
        head = (
            {"type": "categorical", "n": self.head.n}
            if isinstance(self.head, CategoricalHead)
            else {"type": "gaussian", "dim": self.head.dim}
        )
        return {
            "hidden_sizes": list(self.hidden_sizes),
            "activation": self.activation,
            "shared_trunk": self.shared_trunk,
            "head": head,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        h = d["head"]
        head = CategoricalHead(h["n"]) if h["type"] == "categorical" else GaussianHead(h["dim"])
        return cls(tuple(d["hidden_sizes"]), d["activation"], d["shared_trunk"], head)


def arch_for_env(spec: EnvSpec | str, hidden_sizes=(64, 64), shared_trunk=True) -> Architecture:
    spec = get_spec(spec) if isinstance(spec, str) else spec
    if isinstance(spec.action_space, Discrete):
        head = CategoricalHead(spec.action_space.n)
    else:
        head = GaussianHead(spec.action_space.dim)
    return Architecture(tuple(hidden_sizes), "tanh", shared_trunk, head)


class ParameterVector:
    """Ordered float64 parameter blocks; immutable by convention once built."""

    __slots__ = ("blocks",)

    def __init__(self, blocks):
        self.blocks = [np.asarray(b, dtype=np.float64) for b in blocks]

    def copy(self) -> "ParameterVector":
        return ParameterVector([b.copy() for b in self.blocks])

    def shapes(self) -> list[tuple[int, ...]]:
        return [b.shape for b in self.blocks]

    @property
    def num_params(self) -> int:
        return sum(b.size for b in self.blocks)

    def flatten(self) -> np.ndarray:
        return np.concatenate([b.ravel() for b in self.blocks])

    @classmethod
    def unflatten(cls, flat: np.ndarray, shapes) -> "ParameterVector":
        flat = np.asarray(flat, dtype=np.float64)
        blocks = []
        pos = 0
        for shape in shapes:
            size = int(np.prod(shape))
            blocks.append(flat[pos : pos + size].reshape(shape).copy())
            pos += size
        if pos != flat.size:
            raise ShapeError(f"flat vector length {flat.size} != layout size {pos}")
        return cls(blocks)

    @classmethod
    def zeros(cls, shapes) -> "ParameterVector":
        return cls([np.zeros(s, dtype=np.float64) for s in shapes])

    def norm(self) -> float:
        return math.sqrt(sum(float(np.dot(b.ravel(), b.ravel())) for b in self.blocks))

    def all_finite(self) -> bool:
        return all(np.isfinite(b).all() for b in self.blocks)


# --- layout -----------------------------------------------------------------


def layer_dims(arch: Architecture, obs_dim: int) -> list[tuple[int, int]]:
    """(out, in) for each linear layer in block order."""
    hs = arch.hidden_sizes
    trunk = [(hs[0], obs_dim)] + [(hs[i], hs[i - 1]) for i in range(1, len(hs))]
    dims = []
    if arch.shared_trunk:
        dims += trunk
        dims.append((arch.head_dim, hs[-1]))
        dims.append((1, hs[-1]))
    else:
        dims += trunk
        dims.append((arch.head_dim, hs[-1]))
        dims += trunk
        dims.append((1, hs[-1]))
    return dims


def block_shapes(arch: Architecture, obs_dim: int) -> list[tuple[int, ...]]:
    shapes: list[tuple[int, ...]] = []
    for out, inp in layer_dims(arch, obs_dim):
        shapes.append((out, inp))
        shapes.append((out,))
    if isinstance(arch.head, GaussianHead):
        shapes.append((arch.head.dim,))
    return shapes


def has_log_std(arch: Architecture) -> bool:
    return isinstance(arch.head, GaussianHead)


def linear_pairs(arch: Architecture) -> list[tuple[int, int]]:
    """(weight_block, bias_block) index pairs in block order."""
    if arch.shared_trunk:
        n_layers = len(arch.hidden_sizes) + 2
    else:
        n_layers = 2 * (len(arch.hidden_sizes) + 1)
    return [(2 * i, 2 * i + 1) for i in range(n_layers)]


def log_std_index(arch: Architecture) -> int | None:
    return 2 * len(linear_pairs(arch)) if has_log_std(arch) else None


def filter_count(arch: Architecture, obs_dim: int) -> int:
    """Output neurons across all linear layers, plus one per log-std vector."""
    total = sum(out for out, _ in layer_dims(arch, obs_dim))
    return total + (1 if has_log_std(arch) else 0)


def init_params(arch: Architecture, obs_dim: int, seed: int) -> ParameterVector:
    """Scaled-uniform init: W ~ U(-b, b) with b = sqrt(6 / fan_in), row-major
    draw order; biases and log-std start at zero."""
    rng = Rng(seed)
    blocks = []
    for out, inp in layer_dims(arch, obs_dim):
        bound = math.sqrt(6.0 / inp)
        w = np.empty((out, inp), dtype=np.float64)
        for i in range(out):
            for j in range(inp):
                w[i, j] = rng.uniform_range(-bound, bound)
        blocks.append(w)
        blocks.append(np.zeros(out, dtype=np.float64))
    if has_log_std(arch):
        blocks.append(np.zeros(arch.head.dim, dtype=np.float64))
    return ParameterVector(blocks)


# --- distributions ----------------------------------------------------------


@dataclass
class CategoricalDist:
    logits: np.ndarray


@dataclass
class GaussianDist:
    mean: np.ndarray
    log_std: np.ndarray


ActionDistribution = CategoricalDist | GaussianDist


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_prob(dist: ActionDistribution, action) -> float:
    """Exact log density/mass of ``action`` under ``dist`` (1-D dist only)."""
    if isinstance(dist, CategoricalDist):
        a = int(action)
        z = dist.logits
        if not 0 <= a < z.shape[-1]:
            raise ShapeError(f"action index {a} out of range for {z.shape[-1]} actions")
        m = z.max()
        return float(z[a] - m - math.log(np.exp(z - m).sum()))
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    std = np.exp(dist.log_std)
    t = (a - dist.mean) / std
    return float(-0.5 * np.dot(t, t) - dist.log_std.sum() - 0.5 * LOG_2PI * a.size)


def entropy(dist: ActionDistribution) -> float:
    if isinstance(dist, CategoricalDist):
        z = dist.logits
        m = z.max()
        lse = m + math.log(np.exp(z - m).sum())
        p = _softmax(z)
        return float(lse - np.dot(p, z))
    return float(dist.log_std.sum() + 0.5 * (1.0 + LOG_2PI) * dist.log_std.size)


def sample_action(dist: ActionDistribution, rng: Rng):
    """Draw an action and its pre-clip log probability."""
    if isinstance(dist, CategoricalDist):
        p = _softmax(dist.logits)
        u = rng.uniform()
        acc = 0.0
        a = p.size - 1
        for i in range(p.size):
            acc += p[i]
            if u < acc:
                a = i
                break
        return a, log_prob(dist, a)
    std = np.exp(dist.log_std)
    noise = np.array([rng.normal() for _ in range(std.size)])
    a = dist.mean + std * noise
    return a, log_prob(dist, a)


def mode_action(dist: ActionDistribution):
    if isinstance(dist, CategoricalDist):
        return int(np.argmax(dist.logits))
    return dist.mean.copy()


# gradient helpers (w.r.t. head outputs), used by trainers and estimators

def categorical_logprob_grad(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """d log pi(a|s) / d logits for a batch: onehot(a) - softmax(z)."""
    p = _softmax(logits)
    g = -p
    g[np.arange(len(actions)), actions] += 1.0
    return g


def categorical_entropy_grad(logits: np.ndarray) -> np.ndarray:
    """dH/dz_k = -p_k (log p_k + H), rows independent."""
    p = _softmax(logits)
    logp = np.log(p)
    h = -(p * logp).sum(axis=-1, keepdims=True)
    return -p * (logp + h)


def gaussian_logprob_grads(mean, log_std, actions):
    """Returns (d logp/d mean, d logp/d log_std) for a batch."""
    std = np.exp(log_std)
    t = (actions - mean) / std
    return t / std, t * t - 1.0


# --- forward / backward -----------------------------------------------------


def _check_blocks(params: ParameterVector, arch: Architecture, obs_dim: int):
    expected = block_shapes(arch, obs_dim)
    got = [tuple(s) for s in params.shapes()]
    if got != [tuple(s) for s in expected]:
        raise ShapeError(f"parameter blocks {got} do not match architecture layout {expected}")


def forward(params: ParameterVector, arch: Architecture, obs) -> tuple[ActionDistribution, float]:
    """Single-observation forward pass (hot path, no shape checks)."""
    blocks = params.blocks
    n_hidden = len(arch.hidden_sizes)
    h = obs
    if arch.shared_trunk:
        idx = 0
        for _ in range(n_hidden):
            h = np.tanh(blocks[idx] @ h + blocks[idx + 1])
            idx += 2
        out = blocks[idx] @ h + blocks[idx + 1]
        value = float((blocks[idx + 2] @ h)[0] + blocks[idx + 3][0])
    else:
        idx = 0
        hp = obs
        for _ in range(n_hidden):
            hp = np.tanh(blocks[idx] @ hp + blocks[idx + 1])
            idx += 2
        out = blocks[idx] @ hp + blocks[idx + 1]
        idx += 2
        hv = obs
        for _ in range(n_hidden):
            hv = np.tanh(blocks[idx] @ hv + blocks[idx + 1])
            idx += 2
        value = float((blocks[idx] @ hv)[0] + blocks[idx + 1][0])
    if isinstance(arch.head, CategoricalHead):
        return CategoricalDist(out), value
    return GaussianDist(out, blocks[-1]), value


def _forward_tower(blocks, start, n_hidden, obs):
    """Batched trunk+head chain; returns (activations list, head output)."""
    acts = [obs]
    h = obs
    idx = start
    for _ in range(n_hidden):
        h = np.tanh(h @ blocks[idx].T + blocks[idx + 1])
        acts.append(h)
        idx += 2
    out = h @ blocks[idx].T + blocks[idx + 1]
    return acts, out


def forward_batch(params: ParameterVector, arch: Architecture, obs: np.ndarray):
    """Batched forward. Returns (head_out (B,k), values (B,))."""
    blocks = params.blocks
    n_hidden = len(arch.hidden_sizes)
    obs = np.asarray(obs, dtype=np.float64)
    if arch.shared_trunk:
        acts, out = _forward_tower(blocks, 0, n_hidden, obs)
        vi = 2 * (n_hidden + 1)
        values = acts[-1] @ blocks[vi].T + blocks[vi + 1]
        return out, values[:, 0]
    acts_p, out = _forward_tower(blocks, 0, n_hidden, obs)
    vstart = 2 * (n_hidden + 1)
    acts_v, vout = _forward_tower(blocks, vstart, n_hidden, obs)
    return out, vout[:, 0]


def _backward_tower(blocks, start, acts, d_out):
    """Backprop through one affine/tanh tower; returns (block grads, d_input)."""
    grads = []
    g = d_out
    n_hidden = len(acts) - 1
    head_idx = start + 2 * n_hidden
    grads.append((head_idx, g.T @ acts[-1]))
    grads.append((head_idx + 1, g.sum(axis=0)))
    g = g @ blocks[head_idx]
    for layer in range(n_hidden - 1, -1, -1):
        h = acts[layer + 1]
        gz = g * (1.0 - h * h)
        wi = start + 2 * layer
        grads.append((wi, gz.T @ acts[layer]))
        grads.append((wi + 1, gz.sum(axis=0)))
        g = gz @ blocks[wi]
    return grads, g


def backward_batch(
    params: ParameterVector,
    arch: Architecture,
    obs: np.ndarray,
    d_out: np.ndarray,
    d_value: np.ndarray,
    d_log_std: np.ndarray | None = None,
) -> ParameterVector:
    """Gradient of sum_i [d_out_i . head_out_i + d_value_i * V_i] w.r.t. every
    parameter block, plus ``d_log_std`` passed straight through to the log-std
    block (it is a leaf parameter)."""
    blocks = params.blocks
    n_hidden = len(arch.hidden_sizes)
    obs = np.asarray(obs, dtype=np.float64)
    d_out = np.asarray(d_out, dtype=np.float64)
    d_value = np.asarray(d_value, dtype=np.float64).reshape(-1, 1)
    grad_blocks = [np.zeros_like(b) for b in blocks]

    if arch.shared_trunk:
        acts, _ = _forward_tower(blocks, 0, n_hidden, obs)
        pi = 2 * n_hidden
        vi = 2 * (n_hidden + 1)
        grad_blocks[pi] += d_out.T @ acts[-1]
        grad_blocks[pi + 1] += d_out.sum(axis=0)
        grad_blocks[vi] += d_value.T @ acts[-1]
        grad_blocks[vi + 1] += d_value.sum(axis=0)
        g = d_out @ blocks[pi] + d_value @ blocks[vi]
        for layer in range(n_hidden - 1, -1, -1):
            h = acts[layer + 1]
            gz = g * (1.0 - h * h)
            wi = 2 * layer
            grad_blocks[wi] += gz.T @ acts[layer]
            grad_blocks[wi + 1] += gz.sum(axis=0)
            g = gz @ blocks[wi]
    else:
        acts_p, _ = _forward_tower(blocks, 0, n_hidden, obs)
        for idx, val in _backward_tower(blocks, 0, acts_p, d_out)[0]:
            grad_blocks[idx] += val
        vstart = 2 * (n_hidden + 1)
        acts_v, _ = _forward_tower(blocks, vstart, n_hidden, obs)
        for idx, val in _backward_tower(blocks, vstart, acts_v, d_value)[0]:
            grad_blocks[idx] += val

    if has_log_std(arch):
        if d_log_std is not None:
            grad_blocks[-1] += np.asarray(d_log_std, dtype=np.float64)
    grad = ParameterVector(grad_blocks)
    if not grad.all_finite():
        raise NumericalError("non-finite gradient")
    return grad


@dataclass
class LossWeights:
    """Coefficients of the scalar loss
    w_logp * log pi(a|s) + w_value * (V - target)^2 + w_entropy * H."""

    policy_logprob: float = 0.0
    value_mse: float = 0.0
    entropy: float = 0.0
    value_target: float = 0.0


def backward(
    params: ParameterVector,
    arch: Architecture,
    obs,
    action,
    weights: LossWeights,
) -> ParameterVector:
    """Gradient of the weighted scalar loss for one (obs, action) sample."""
    obs2 = np.asarray(obs, dtype=np.float64).reshape(1, -1)
    _check_blocks(params, arch, obs2.shape[1])
    if not params.all_finite():
        raise NumericalError("non-finite parameter value")
    out, values = forward_batch(params, arch, obs2)
    if not (np.isfinite(out).all() and np.isfinite(values).all()):
        raise NumericalError("non-finite forward activation")
    d_log_std = None
    if isinstance(arch.head, CategoricalHead):
        d_out = weights.policy_logprob * categorical_logprob_grad(out, np.array([int(action)]))
        d_out += weights.entropy * categorical_entropy_grad(out)
    else:
        a = np.asarray(action, dtype=np.float64).reshape(1, -1)
        log_std = params.blocks[-1]
        d_mean, d_ls = gaussian_logprob_grads(out, log_std, a)
        d_out = weights.policy_logprob * d_mean
        d_log_std = weights.policy_logprob * d_ls.sum(axis=0) + weights.entropy * np.ones_like(log_std)
    d_value = weights.value_mse * 2.0 * (values - weights.value_target)
    return backward_batch(params, arch, obs2, d_out, d_value, d_log_std)


# --- checkpoint serialization -------------------------------------------------

CHECKPOINT_SCHEMA = "checkpoint.v1"


@dataclass
class Checkpoint:
    params: ParameterVector
    arch: Architecture
    env: str
    algo: str
    train_step: int
    seed: int
    path: str | None = None

    @property
    def env_spec(self) -> EnvSpec:
        return get_spec(self.env)


def _encode_block(b: np.ndarray) -> dict:
    data = base64.b64encode(np.ascontiguousarray(b, dtype="<f8").tobytes()).decode("ascii")
    return {"shape": list(b.shape), "data": data}


def _decode_block(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def checkpoint_to_json(ckpt: Checkpoint) -> str:
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "env": ckpt.env,
        "algo": ckpt.algo,
        "train_step": ckpt.train_step,
        "seed": ckpt.seed,
        "architecture": ckpt.arch.to_dict(),
        "blocks": [_encode_block(b) for b in ckpt.params.blocks],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_text(checkpoint_to_json(ckpt))


def load_checkpoint(path) -> Checkpoint:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {doc.get('schema')!r}")
    arch = Architecture.from_dict(doc["architecture"])
    params = ParameterVector([_decode_block(b) for b in doc["blocks"]])
    return Checkpoint(
        params=params,
        arch=arch,
        env=doc["env"],
        algo=doc["algo"],
        train_step=int(doc["train_step"]),
        seed=int(doc["seed"]),
        path=str(path),
    )

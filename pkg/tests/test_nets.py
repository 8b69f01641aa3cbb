import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rewardscape import nets
from rewardscape.nets import (
    Architecture,
    CategoricalDist,
    CategoricalHead,
    Checkpoint,
    GaussianDist,
    GaussianHead,
    LossWeights,
    NumericalError,
    ParameterVector,
)
from rewardscape.rng import Rng

from helpers import random_params
from oracles import (
    finite_difference_grad,
    gaussian_entropy,
    gaussian_logprob,
    mlp_forward,
    softmax_entropy,
    softmax_logprob,
)

ARCHS = [
    ("cat-shared", Architecture((8, 6), "tanh", True, CategoricalHead(3)), 4),
    ("cat-split", Architecture((5,), "tanh", False, CategoricalHead(2)), 3),
    ("gauss-shared", Architecture((7, 5), "tanh", True, GaussianHead(2)), 6),
    ("gauss-split", Architecture((6, 4), "tanh", False, GaussianHead(1)), 3),
]


def test_zero_params_uniform_categorical():
    arch = Architecture(head=CategoricalHead(2))
    params = ParameterVector.zeros(nets.block_shapes(arch, 4))
    dist, value = nets.forward(params, arch, np.zeros(4))
    assert np.array_equal(dist.logits, np.zeros(2))
    assert value == 0.0
    p = np.exp(dist.logits) / np.exp(dist.logits).sum()
    assert np.allclose(p, [0.5, 0.5])


@pytest.mark.parametrize("name,arch,obs_dim", ARCHS)
def test_forward_matches_matrix_oracle(name, arch, obs_dim):
    rng = np.random.default_rng(hash(name) % 2**32)
    for k in range(5):
        params = random_params(arch, obs_dim, seed=100 + k)
        obs = rng.normal(size=obs_dim)
        dist, value = nets.forward(params, arch, obs)
        blocks = params.blocks[:-1] if nets.has_log_std(arch) else params.blocks
        head, value_oracle = mlp_forward(blocks, len(arch.hidden_sizes), arch.shared_trunk, obs)
        out = dist.logits if isinstance(dist, CategoricalDist) else dist.mean
        assert np.allclose(out, head, rtol=1e-12, atol=1e-14)
        assert value == pytest.approx(value_oracle, rel=1e-12, abs=1e-14)
        # batch path agrees with the single path
        bout, bval = nets.forward_batch(params, arch, obs[None, :])
        assert np.allclose(bout[0], out, rtol=1e-13, atol=1e-14)
        assert bval[0] == pytest.approx(value, rel=1e-13, abs=1e-14)


@pytest.mark.parametrize("name,arch,obs_dim", ARCHS)
def test_flatten_unflatten_bit_exact(name, arch, obs_dim):
    params = random_params(arch, obs_dim, seed=7)
    flat = params.flatten()
    back = ParameterVector.unflatten(flat, params.shapes())
    for a, b in zip(params.blocks, back.blocks):
        assert np.array_equal(a, b)


def test_log_prob_examples():
    assert nets.log_prob(CategoricalDist(np.zeros(2)), 0) == pytest.approx(math.log(0.5), rel=1e-14)
    assert nets.log_prob(CategoricalDist(np.array([math.log(3.0), 0.0])), 0) == pytest.approx(
        math.log(0.75), rel=1e-14
    )
    d = GaussianDist(np.array([1.0]), np.array([0.0]))
    assert nets.log_prob(d, np.array([1.0])) == pytest.approx(-0.5 * math.log(2 * math.pi), rel=1e-14)


def test_log_prob_out_of_range_action():
    with pytest.raises(nets.ShapeError):
        nets.log_prob(CategoricalDist(np.zeros(2)), 2)


def test_entropy_values():
    assert nets.entropy(CategoricalDist(np.zeros(3))) == pytest.approx(math.log(3.0), rel=1e-13)
    assert nets.entropy(GaussianDist(np.zeros(2), np.zeros(2))) == pytest.approx(
        gaussian_entropy(np.zeros(2)), rel=1e-13
    )


def test_sample_near_deterministic_categorical():
    rng = Rng(0)
    action, logp = nets.sample_action(CategoricalDist(np.array([100.0, 0.0])), rng)
    assert action == 0
    assert logp == pytest.approx(0.0, abs=1e-12)


def test_sample_gaussian_logprob_matches_density():
    rng = Rng(5)
    d = GaussianDist(np.zeros(1), np.zeros(1))
    for _ in range(20):
        a, logp = nets.sample_action(d, rng)
        u = float(a[0])
        assert logp == pytest.approx(-0.5 * u * u - 0.5 * math.log(2 * math.pi), rel=1e-12)


def test_sample_frequency_binomial_bound():
    rng = Rng(123)
    d = CategoricalDist(np.zeros(2))
    hits = sum(1 for _ in range(10000) if nets.sample_action(d, rng)[0] == 0)
    assert 0.47 <= hits / 10000 <= 0.53


def test_softmax_logprob_gradient_example():
    # gradient of log pi(a=0) w.r.t. logits at z=(0,0) lands on the head bias
    arch = Architecture((4,), "tanh", True, CategoricalHead(2))
    params = ParameterVector.zeros(nets.block_shapes(arch, 3))
    grad = nets.backward(params, arch, np.zeros(3), 0, LossWeights(policy_logprob=1.0))
    head_bias = grad.blocks[3]
    assert np.allclose(head_bias, [0.5, -0.5], rtol=1e-14)


def test_entropy_gradient_zero_at_uniform():
    arch = Architecture((4,), "tanh", True, CategoricalHead(2))
    params = ParameterVector.zeros(nets.block_shapes(arch, 3))
    grad = nets.backward(params, arch, np.zeros(3), 0, LossWeights(entropy=1.0))
    assert np.allclose(grad.blocks[3], [0.0, 0.0], atol=1e-15)


def _loss_via_oracle(arch, obs, action, weights):
    """Scalar loss evaluated through the independent forward/density oracles."""

    def f(flat):
        pv = ParameterVector.unflatten(flat, nets.block_shapes(arch, len(obs)))
        blocks = pv.blocks[:-1] if nets.has_log_std(arch) else pv.blocks
        head, value = mlp_forward(blocks, len(arch.hidden_sizes), arch.shared_trunk, obs)
        if isinstance(arch.head, CategoricalHead):
            logp = softmax_logprob(head, int(action))
            ent = softmax_entropy(head)
        else:
            log_std = pv.blocks[-1]
            logp = gaussian_logprob(head, log_std, action)
            ent = gaussian_entropy(log_std)
        return (
            weights.policy_logprob * logp
            + weights.value_mse * (value - weights.value_target) ** 2
            + weights.entropy * ent
        )

    return f


def test_gradcheck_20_fixtures():
    """Analytic gradients vs central finite differences: 20 random fixtures,
    max relative error < 1e-4 on coordinates with |g| > 1e-8."""
    rng = np.random.default_rng(2024)
    fixtures = []
    for k in range(20):
        name, arch, obs_dim = ARCHS[k % len(ARCHS)]
        params = random_params(arch, obs_dim, seed=500 + k)
        obs = rng.normal(size=obs_dim)
        if isinstance(arch.head, CategoricalHead):
            action = int(rng.integers(arch.head.n))
        else:
            action = rng.normal(size=arch.head.dim)
        weights = LossWeights(
            policy_logprob=float(rng.normal()),
            value_mse=float(rng.uniform(0.1, 1.0)),
            entropy=float(rng.normal() * 0.1),
            value_target=float(rng.normal()),
        )
        fixtures.append((arch, obs_dim, params, obs, action, weights))

    worst = 0.0
    for arch, obs_dim, params, obs, action, weights in fixtures:
        grad = nets.backward(params, arch, obs, action, weights)
        fd = finite_difference_grad(
            _loss_via_oracle(arch, obs, action, weights), params.flatten(), eps=1e-5
        )
        an = grad.flatten()
        mask = np.abs(an) > 1e-8
        rel = np.abs(an[mask] - fd[mask]) / np.abs(an[mask])
        worst = max(worst, float(rel.max()))
    assert worst < 1e-4, worst


def test_filter_count():
    arch = Architecture((64, 64), "tanh", True, CategoricalHead(2))
    assert nets.filter_count(arch, 4) == 64 + 64 + 2 + 1
    garch = Architecture((64, 64), "tanh", True, GaussianHead(1))
    assert nets.filter_count(garch, 3) == 64 + 64 + 1 + 1 + 1


def test_init_params_properties():
    arch = Architecture((8, 8), "tanh", True, CategoricalHead(2))
    params = nets.init_params(arch, 4, seed=0)
    again = nets.init_params(arch, 4, seed=0)
    for a, b in zip(params.blocks, again.blocks):
        assert np.array_equal(a, b)
    # He-style bound on the first layer
    assert np.abs(params.blocks[0]).max() <= math.sqrt(6.0 / 4)
    assert np.array_equal(params.blocks[1], np.zeros(8))


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    arch = Architecture((6, 5), "tanh", True, GaussianHead(2))
    params = random_params(arch, 3, seed=11)
    ckpt = Checkpoint(params, arch, "pendulum", "ppo", 1234, 42)
    path = tmp_path / "ck.json"
    nets.save_checkpoint(path, ckpt)
    back = nets.load_checkpoint(path)
    assert back.env == "pendulum" and back.algo == "ppo"
    assert back.train_step == 1234 and back.seed == 42
    assert back.arch == arch
    for a, b in zip(params.blocks, back.params.blocks):
        assert np.array_equal(a, b)
    # serialization itself is deterministic
    assert nets.checkpoint_to_json(ckpt) == nets.checkpoint_to_json(back)


def test_checkpoint_schema_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"schema": "checkpoint.v999"}')
    with pytest.raises(ValueError):
        nets.load_checkpoint(path)


def test_backward_rejects_nonfinite():
    arch = Architecture((4,), "tanh", True, CategoricalHead(2))
    params = ParameterVector.zeros(nets.block_shapes(arch, 3))
    params.blocks[0][0, 0] = np.inf
    with pytest.raises(NumericalError):
        nets.backward(params, arch, np.ones(3), 0, LossWeights(policy_logprob=1.0))


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=25, deadline=None)
def test_flatten_roundtrip_property(seed):
    arch = Architecture((5, 4), "tanh", True, GaussianHead(2))
    params = random_params(arch, 3, seed=seed)
    back = ParameterVector.unflatten(params.flatten(), params.shapes())
    assert all(np.array_equal(a, b) for a, b in zip(params.blocks, back.blocks))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rewardscape import nets, training
from rewardscape.nets import Architecture, CategoricalHead, ParameterVector
from rewardscape.rng import Rng
from rewardscape.training import (
    RolloutBatch,
    TrainConfig,
    TrainingDiverged,
    a2c_update,
    clipped_surrogate_term,
    compute_gae,
    ppo_update,
)

from helpers import random_params
from oracles import gae_direct


def make_batch(rng, n=16, obs_dim=3, n_actions=2, params=None, arch=None):
    obs = rng.normal(size=(n, obs_dim))
    actions = rng.integers(0, n_actions, size=n)
    if params is not None:
        out, values = nets.forward_batch(params, arch, obs)
        z = out - out.max(axis=1, keepdims=True)
        logp = z[np.arange(n), actions] - np.log(np.exp(z).sum(axis=1))
    else:
        values = rng.normal(size=n)
        logp = np.log(rng.uniform(0.05, 0.95, size=n))
    return RolloutBatch(
        observations=obs,
        actions=actions,
        log_probs=logp,
        rewards=rng.normal(size=n),
        dones=rng.random(n) < 0.2,
        value_estimates=values,
        bootstrap_value=float(rng.normal()),
    )


# --- GAE -----------------------------------------------------------------------


def test_gae_reward_to_go_example():
    batch = RolloutBatch(
        observations=np.zeros((2, 1)),
        actions=np.zeros(2, dtype=int),
        log_probs=np.zeros(2),
        rewards=np.array([1.0, 1.0]),
        dones=np.array([False, False]),
        value_estimates=np.array([0.5, 0.5]),
        bootstrap_value=0.0,
    )
    adv, ret = compute_gae(batch, gamma=1.0, lam=1.0)
    assert np.allclose(adv, [1.5, 0.5], atol=0)
    assert np.allclose(ret, [2.0, 1.0], atol=0)


@given(st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_gae_gamma_zero_is_one_step(seed):
    rng = np.random.default_rng(seed)
    batch = make_batch(rng, n=8)
    adv, _ = compute_gae(batch, gamma=0.0, lam=rng.uniform())
    assert np.allclose(adv, batch.rewards - batch.value_estimates, rtol=1e-15, atol=1e-15)


@given(st.integers(0, 10**6))
@settings(max_examples=50, deadline=None)
def test_gae_matches_direct_summation_oracle(seed):
    rng = np.random.default_rng(seed)
    batch = make_batch(rng, n=8)
    gamma = rng.uniform(0.5, 1.0)
    lam = rng.uniform(0.0, 1.0)
    adv, ret = compute_gae(batch, gamma, lam)
    adv_o, ret_o = gae_direct(
        batch.rewards, batch.value_estimates, batch.bootstrap_value, batch.dones, gamma, lam
    )
    assert np.allclose(adv, adv_o, rtol=1e-12, atol=1e-12)
    assert np.allclose(ret, ret_o, rtol=1e-12, atol=1e-12)


# --- A2C -------------------------------------------------------------------------


def _config(algo="a2c", **kw):
    base = dict(
        algo=algo,
        learning_rate=0.1,
        n_steps=16,
        total_steps=16,
        checkpoint_interval=16,
        seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_a2c_zero_advantage_exact_value_fit_is_noop():
    arch = Architecture((6,), "tanh", True, CategoricalHead(2))
    params = random_params(arch, 3, seed=2)
    rng = np.random.default_rng(0)
    batch = make_batch(rng, obs_dim=3, params=params, arch=arch)
    _, values = nets.forward_batch(params, arch, batch.observations)
    adv = np.zeros(len(batch))
    new_params, _ = a2c_update(params, arch, batch, adv, values, _config())
    for a, b in zip(params.blocks, new_params.blocks):
        assert np.array_equal(a, b)


def test_a2c_positive_advantage_increases_action_probability():
    arch = Architecture((6,), "tanh", True, CategoricalHead(2))
    params = random_params(arch, 2, seed=5)
    obs = np.array([[0.3, -0.2]])
    batch = RolloutBatch(
        observations=obs,
        actions=np.array([0]),
        log_probs=np.array([-0.7]),
        rewards=np.array([1.0]),
        dones=np.array([True]),
        value_estimates=np.array([0.0]),
        bootstrap_value=0.0,
    )
    def prob0(p):
        dist, _ = nets.forward(p, arch, obs[0])
        z = dist.logits - dist.logits.max()
        return float(np.exp(z[0]) / np.exp(z).sum())
    before = prob0(params)
    new_params, _ = a2c_update(params, arch, batch, np.array([1.0]), np.array([0.0]), _config())
    assert prob0(new_params) > before


def test_a2c_gradient_matches_finite_differences():
    """Recover the update gradient from the parameter step and compare with
    central finite differences of the full loss."""
    arch = Architecture((5,), "tanh", True, CategoricalHead(2))
    params = random_params(arch, 3, seed=9)
    rng = np.random.default_rng(3)
    batch = make_batch(rng, n=12, obs_dim=3, params=params, arch=arch)
    adv, ret = compute_gae(batch, 0.99, 1.0)
    lr = 1e-3
    cfg = _config(learning_rate=lr, value_coef=0.37, entropy_coef=0.05, max_grad_norm=1e9)
    new_params, _ = a2c_update(params, arch, batch, adv, ret, cfg)
    grad = (params.flatten() - new_params.flatten()) / lr

    from oracles import finite_difference_grad, mlp_forward, softmax_entropy, softmax_logprob

    def loss(flat):
        pv = ParameterVector.unflatten(flat, params.shapes())
        total_p, total_v, total_h = 0.0, 0.0, 0.0
        n = len(batch)
        for i in range(n):
            head, value = mlp_forward(pv.blocks, 1, True, batch.observations[i])
            total_p += softmax_logprob(head, int(batch.actions[i])) * adv[i]
            total_v += (value - ret[i]) ** 2
            total_h += softmax_entropy(head)
        return -total_p / n + 0.37 * total_v / n - 0.05 * total_h / n

    fd = finite_difference_grad(loss, params.flatten(), eps=1e-5)
    mask = np.abs(grad) > 1e-8
    rel = np.abs(grad[mask] - fd[mask]) / np.abs(grad[mask])
    assert rel.max() < 1e-4


def test_a2c_diverged_batch_raises():
    arch = Architecture((5,), "tanh", True, CategoricalHead(2))
    params = random_params(arch, 3, seed=1)
    rng = np.random.default_rng(1)
    batch = make_batch(rng, obs_dim=3, params=params, arch=arch)
    bad = np.full(len(batch), np.nan)
    with pytest.raises(TrainingDiverged):
        a2c_update(params, arch, batch, bad, batch.value_estimates, _config())


# --- PPO --------------------------------------------------------------------------


def test_clipped_surrogate_arithmetic():
    assert clipped_surrogate_term(1.5, 1.0, 0.2) == pytest.approx(1.2)
    assert clipped_surrogate_term(0.5, -1.0, 0.2) == pytest.approx(-0.8)
    assert clipped_surrogate_term(1.0, 2.5, 0.2) == pytest.approx(2.5)


def test_advantage_normalization_moments():
    rng = np.random.default_rng(8)
    adv = rng.normal(3.0, 17.0, size=256)
    normed = training._normalize(adv)
    assert abs(normed.mean()) < 1e-10
    assert abs(normed.std() - 1.0) < 1e-10


def test_ppo_equals_a2c_in_degenerate_config():
    """eps=inf, one epoch, one minibatch, no advantage normalization: the PPO
    step must match the A2C step to 1e-10."""
    arch = Architecture((6, 4), "tanh", True, CategoricalHead(3))
    params = random_params(arch, 4, seed=33)
    rng = np.random.default_rng(10)
    batch = make_batch(rng, n=24, obs_dim=4, n_actions=3, params=params, arch=arch)
    adv, ret = compute_gae(batch, 0.99, 0.95)
    a2c_cfg = _config(algo="a2c", learning_rate=0.05, normalize_advantages=False)
    ppo_cfg = _config(
        algo="ppo",
        learning_rate=0.05,
        normalize_advantages=False,
        ppo_epochs=1,
        minibatch_count=1,
        ppo_clip=math.inf,
    )
    a2c_params, _ = a2c_update(params, arch, batch, adv, ret, a2c_cfg)
    ppo_params, _ = ppo_update(params, arch, batch, adv, ret, ppo_cfg, Rng(0))
    diff = np.abs(a2c_params.flatten() - ppo_params.flatten()).max()
    assert diff < 1e-10


def test_ppo_first_epoch_ratio_one():
    """With log_probs recorded from the same params, the first minibatch pass
    sees rho=1 and a mean objective equal to mean advantage."""
    arch = Architecture((5,), "tanh", True, CategoricalHead(2))
    params = random_params(arch, 3, seed=21)
    rng = np.random.default_rng(4)
    batch = make_batch(rng, n=10, obs_dim=3, params=params, arch=arch)
    out, _ = nets.forward_batch(params, arch, batch.observations)
    z = out - out.max(axis=1, keepdims=True)
    logp = z[np.arange(10), batch.actions] - np.log(np.exp(z).sum(axis=1))
    assert np.allclose(logp, batch.log_probs, rtol=1e-12)
    ratio = np.exp(logp - batch.log_probs)
    adv = rng.normal(size=10)
    assert np.allclose(np.minimum(ratio * adv, np.clip(ratio, 0.8, 1.2) * adv).mean(), adv.mean())


# --- train loop --------------------------------------------------------------------


def test_train_zero_lr_is_pure_rollout(tmp_path):
    arch = nets.arch_for_env("cartpole", hidden_sizes=(8,))
    cfg = TrainConfig(
        algo="ppo", learning_rate=0.0, n_steps=256, total_steps=1024,
        checkpoint_interval=256, seed=4,
    )
    run = training.train("cartpole", arch, cfg, tmp_path / "run")
    steps = run.checkpoint_steps()
    first = run.load_checkpoint(0).params
    for step in steps:
        ck = run.load_checkpoint(step)
        for a, b in zip(first.blocks, ck.params.blocks):
            assert np.array_equal(a, b)


def test_checkpoint_count_total_equals_interval(tmp_path):
    arch = nets.arch_for_env("cartpole", hidden_sizes=(8,))
    cfg = TrainConfig(
        algo="a2c", learning_rate=0.01, n_steps=128, total_steps=512,
        checkpoint_interval=512, seed=0,
    )
    run = training.train("cartpole", arch, cfg, tmp_path / "run")
    assert run.checkpoint_steps() == [0, 512]


def test_train_deterministic_checkpoint_bytes(tmp_path):
    arch = nets.arch_for_env("cartpole", hidden_sizes=(8,))
    cfg = TrainConfig(
        algo="ppo", learning_rate=0.1, n_steps=256, total_steps=512,
        checkpoint_interval=256, seed=6, value_coef=0.05,
    )
    run1 = training.train("cartpole", arch, cfg, tmp_path / "r1")
    run2 = training.train("cartpole", arch, cfg, tmp_path / "r2")
    for step in run1.checkpoint_steps():
        b1 = run1.checkpoint_path(step).read_bytes()
        b2 = run2.checkpoint_path(step).read_bytes()
        assert b1 == b2
    assert (run1.path / "log.csv").read_bytes() == (run2.path / "log.csv").read_bytes()


def test_run_directory_layout(tiny_cartpole_run):
    run = tiny_cartpole_run
    assert (run.path / "run.json").exists()
    assert (run.path / "log.csv").exists()
    steps = run.checkpoint_steps()
    assert steps[0] == 0 and steps == sorted(steps)
    ck = run.load_checkpoint(steps[-1])
    assert ck.env == "cartpole"
    cfg = run.config()
    assert cfg["schema"] == "run.v1" and cfg["config"]["algo"] == "ppo"


def test_select_best_checkpoint_tie_break():
    assert training._argmax_prefer_later([100.0, 200.0, 200.0]) == 2
    assert training._argmax_prefer_later([300.0, 250.0]) == 0
    assert training._argmax_prefer_later([5.0]) == 0


def test_select_best_checkpoint_integration(tiny_cartpole_run):
    best = training.select_best_checkpoint(tiny_cartpole_run, episodes=5, seed=1)
    assert best.train_step in tiny_cartpole_run.checkpoint_steps()


def test_gae_lambda_defaults():
    ppo = _config(algo="ppo")
    a2c = _config(algo="a2c")
    assert ppo.gae_lambda == 0.95 and ppo.normalize_advantages is True
    assert a2c.gae_lambda == 1.0 and a2c.normalize_advantages is False


def test_config_validation():
    with pytest.raises(ValueError):
        _config(algo="dqn")
    with pytest.raises(ValueError):
        _config(checkpoint_interval=32, total_steps=16)

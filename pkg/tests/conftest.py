import pytest

from rewardscape import nets, training


@pytest.fixture(scope="session")
def tiny_cartpole_run(tmp_path_factory):
    """Small deterministic PPO run reused by structural tests."""
    out = tmp_path_factory.mktemp("runs") / "tiny_cartpole"
    arch = nets.arch_for_env("cartpole", hidden_sizes=(16, 16))
    config = training.TrainConfig(
        algo="ppo",
        learning_rate=0.1,
        n_steps=512,
        total_steps=4096,
        checkpoint_interval=1024,
        seed=3,
        value_coef=0.05,
        max_grad_norm=1.0,
    )
    return training.train("cartpole", arch, config, out)

"""Shared test scaffolding: scripted environments and parameter builders."""

import numpy as np

from rewardscape.envs import Box, Discrete, EnvSpec
from rewardscape import nets


class ScriptedEnv:
    """Environment whose rewards are predetermined and action-independent.

    ``episodes`` is a list of per-step reward lists; it cycles forever.
    Observations are a constant vector so any policy can act on it.
    """

    def __init__(self, episodes, obs=(0.0,), n_actions=2):
        self.episodes = [list(e) for e in episodes]
        self.obs = np.asarray(obs, dtype=np.float64)
        max_len = max(len(e) for e in self.episodes)
        self.spec = EnvSpec("scripted", len(self.obs), Discrete(n_actions), max_len)
        self._cursor = -1
        self._t = 0
        self.steps_elapsed = 0

    def reset(self):
        self._cursor = (self._cursor + 1) % len(self.episodes)
        self._t = 0
        self.steps_elapsed = 0
        return self.obs.copy()

    def step(self, action):
        rewards = self.episodes[self._cursor]
        r = rewards[self._t]
        self._t += 1
        self.steps_elapsed += 1
        done = self._t >= len(rewards)
        from rewardscape.envs import Transition

        return Transition(self.obs.copy(), float(r), done, False)


class BanditEnv:
    """One-step, two-armed bandit: reward 1 for arm 0, 0 for arm 1."""

    def __init__(self, rewards=(1.0, 0.0)):
        self.rewards = rewards
        self.obs = np.array([1.0])
        self.spec = EnvSpec("bandit", 1, Discrete(len(rewards)), 1)
        self.steps_elapsed = 0

    def reset(self):
        self.steps_elapsed = 0
        return self.obs.copy()

    def step(self, action):
        from rewardscape.envs import Transition

        self.steps_elapsed = 1
        return Transition(self.obs.copy(), float(self.rewards[int(action)]), True, False)


def random_params(arch, obs_dim, seed, scale=0.4):
    """ParameterVector with numpy-random blocks (test-side randomness)."""
    rng = np.random.default_rng(seed)
    blocks = [rng.normal(0.0, scale, size=s) for s in nets.block_shapes(arch, obs_dim)]
    return nets.ParameterVector(blocks)

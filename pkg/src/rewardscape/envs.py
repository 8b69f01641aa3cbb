"""Classic-control environments with deterministic, seedable dynamics.

The five tasks reproduce the canonical Gym definitions (CartPole-v1,
Acrobot-v1, MountainCar-v0, MountainCarContinuous-v0, Pendulum-v0) with
64-bit float dynamics and no observation/reward shaping. All randomness
comes from the package RNG (see :mod:`rewardscape.rng`), so a fixed seed
yields a bit-identical transition sequence for a fixed action sequence.

Constants per environment are listed in the README reference table and are
intentionally not configurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng

ENV_NAMES = ("cartpole", "acrobot", "mountaincar", "mountaincar_continuous", "pendulum")


class EnvError(ValueError):
    """Unknown environment name or malformed spec."""


class ActionError(ValueError):
    """Action outside the environment's action space."""


class EpisodeOverError(RuntimeError):
    """step() called after the episode already finished."""


@dataclass(frozen=True)
class Discrete:
    n: int

    def contains(self, action) -> bool:
        return isinstance(action, (int, np.integer)) and 0 <= int(action) < self.n


@dataclass(frozen=True)
class Box:
    dim: int
    low: float
    high: float

    def contains(self, action) -> bool:
        arr = np.asarray(action, dtype=np.float64).reshape(-1)
        if arr.shape != (self.dim,):
            return False
        return bool(np.all(arr >= self.low) and np.all(arr <= self.high))

    def clip(self, action) -> np.ndarray:
        arr = np.asarray(action, dtype=np.float64).reshape(-1)
        return np.clip(arr, self.low, self.high)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_space: Discrete | Box
    max_episode_steps: int


@dataclass
class Transition:
    observation: np.ndarray
    reward: float
    done: bool
    truncated: bool


ENV_SPECS: dict[str, EnvSpec] = {
    "cartpole": EnvSpec("cartpole", 4, Discrete(2), 500),
    "acrobot": EnvSpec("acrobot", 6, Discrete(3), 500),
    "mountaincar": EnvSpec("mountaincar", 2, Discrete(3), 200),
    "mountaincar_continuous": EnvSpec("mountaincar_continuous", 2, Box(1, -1.0, 1.0), 999),
    "pendulum": EnvSpec("pendulum", 3, Box(1, -2.0, 2.0), 200),
}


class EnvInstance:
    """One environment with its own RNG stream. Not thread-safe; use one
    instance per worker."""

    spec: EnvSpec

    def __init__(self, seed: int):
        self.rng = Rng(seed)
        self.state: tuple[float, ...] = ()
        self.steps_elapsed = 0
        self._done = True

    def reset(self) -> np.ndarray:
        self.state = self._initial_state()
        self.steps_elapsed = 0
        self._done = False
        return self._observe()

    def step(self, action) -> Transition:
        if self._done:
            raise EpisodeOverError(f"{self.spec.name}: step() after episode end")
        if not self.spec.action_space.contains(action):
            raise ActionError(f"{self.spec.name}: action {action!r} out of bounds")
        reward, terminated = self._advance(action)
        self.steps_elapsed += 1
        truncated = self.steps_elapsed >= self.spec.max_episode_steps and not terminated
        self._done = terminated or truncated
        return Transition(self._observe(), reward, self._done, truncated)

    # subclasses implement the canonical dynamics
    def _initial_state(self) -> tuple[float, ...]:
        raise NotImplementedError

    def _advance(self, action) -> tuple[float, bool]:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError


class CartPole(EnvInstance):
    """Pole balancing; Euler integration at dt=0.02."""

    spec = ENV_SPECS["cartpole"]

    GRAVITY = 9.8
    MASS_CART = 1.0
    MASS_POLE = 0.1
    TOTAL_MASS = MASS_CART + MASS_POLE
    HALF_LENGTH = 0.5
    POLEMASS_LENGTH = MASS_POLE * HALF_LENGTH
    FORCE_MAG = 10.0
    TAU = 0.02
    X_LIMIT = 2.4
    THETA_LIMIT = 12.0 * math.pi / 180.0

    def _initial_state(self):
        return tuple(self.rng.uniform_range(-0.05, 0.05) for _ in range(4))

    def _advance(self, action):
        x, x_dot, theta, theta_dot = self.state
        force = self.FORCE_MAG if action == 1 else -self.FORCE_MAG
        cos_t = math.cos(theta)
        sin_t = math.sin(theta)
        temp = (force + self.POLEMASS_LENGTH * theta_dot * theta_dot * sin_t) / self.TOTAL_MASS
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.MASS_POLE * cos_t * cos_t / self.TOTAL_MASS)
        )
        x_acc = temp - self.POLEMASS_LENGTH * theta_acc * cos_t / self.TOTAL_MASS
        x = x + self.TAU * x_dot
        x_dot = x_dot + self.TAU * x_acc
        theta = theta + self.TAU * theta_dot
        theta_dot = theta_dot + self.TAU * theta_acc
        self.state = (x, x_dot, theta, theta_dot)
        terminated = abs(x) > self.X_LIMIT or abs(theta) > self.THETA_LIMIT
        return 1.0, terminated

    def _observe(self):
        return np.array(self.state, dtype=np.float64)


def _wrap(x: float, low: float, high: float) -> float:
    diff = high - low
    while x > high:
        x -= diff
    while x < low:
        x += diff
    return x


class Acrobot(EnvInstance):
    """Two-link underactuated swing-up; RK4 integration of the book dynamics."""

    spec = ENV_SPECS["acrobot"]

    DT = 0.2
    LINK_LENGTH_1 = 1.0
    LINK_MASS_1 = 1.0
    LINK_MASS_2 = 1.0
    LINK_COM_1 = 0.5
    LINK_COM_2 = 0.5
    LINK_MOI = 1.0
    GRAVITY = 9.8
    MAX_VEL_1 = 4.0 * math.pi
    MAX_VEL_2 = 9.0 * math.pi
    TORQUES = (-1.0, 0.0, 1.0)

    def _initial_state(self):
        return tuple(self.rng.uniform_range(-0.1, 0.1) for _ in range(4))

    def _dsdt(self, s, torque):
        m1 = self.LINK_MASS_1
        m2 = self.LINK_MASS_2
        l1 = self.LINK_LENGTH_1
        lc1 = self.LINK_COM_1
        lc2 = self.LINK_COM_2
        i1 = self.LINK_MOI
        i2 = self.LINK_MOI
        g = self.GRAVITY
        theta1, theta2, dtheta1, dtheta2 = s
        d1 = (
            m1 * lc1 * lc1
            + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * math.cos(theta2))
            + i1
            + i2
        )
        d2 = m2 * (lc2 * lc2 + l1 * lc2 * math.cos(theta2)) + i2
        phi2 = m2 * lc2 * g * math.cos(theta1 + theta2 - math.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dtheta2 * dtheta2 * math.sin(theta2)
            - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * math.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * math.cos(theta1 - math.pi / 2.0)
            + phi2
        )
        ddtheta2 = (
            torque
            + d2 / d1 * phi1
            - m2 * l1 * lc2 * dtheta1 * dtheta1 * math.sin(theta2)
            - phi2
        ) / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1)
        ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
        return (dtheta1, dtheta2, ddtheta1, ddtheta2)

    def _advance(self, action):
        torque = self.TORQUES[int(action)]
        s = self.state
        dt = self.DT
        k1 = self._dsdt(s, torque)
        k2 = self._dsdt(tuple(s[i] + dt / 2.0 * k1[i] for i in range(4)), torque)
        k3 = self._dsdt(tuple(s[i] + dt / 2.0 * k2[i] for i in range(4)), torque)
        k4 = self._dsdt(tuple(s[i] + dt * k3[i] for i in range(4)), torque)
        ns = [s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(4)]
        ns[0] = _wrap(ns[0], -math.pi, math.pi)
        ns[1] = _wrap(ns[1], -math.pi, math.pi)
        ns[2] = min(max(ns[2], -self.MAX_VEL_1), self.MAX_VEL_1)
        ns[3] = min(max(ns[3], -self.MAX_VEL_2), self.MAX_VEL_2)
        self.state = tuple(ns)
        terminated = -math.cos(ns[0]) - math.cos(ns[1] + ns[0]) > 1.0
        return (0.0 if terminated else -1.0), terminated

    def _observe(self):
        t1, t2, dt1, dt2 = self.state
        return np.array(
            [math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2), dt1, dt2],
            dtype=np.float64,
        )


class MountainCar(EnvInstance):
    """Discrete-action mountain car; reward -1 per step until the goal."""

    spec = ENV_SPECS["mountaincar"]

    MIN_POS = -1.2
    MAX_POS = 0.6
    MAX_SPEED = 0.07
    GOAL_POS = 0.5
    FORCE = 0.001
    GRAVITY = 0.0025

    def _initial_state(self):
        return (self.rng.uniform_range(-0.6, -0.4), 0.0)

    def _advance(self, action):
        position, velocity = self.state
        velocity += (int(action) - 1) * self.FORCE + math.cos(3.0 * position) * (-self.GRAVITY)
        velocity = min(max(velocity, -self.MAX_SPEED), self.MAX_SPEED)
        position += velocity
        position = min(max(position, self.MIN_POS), self.MAX_POS)
        if position == self.MIN_POS and velocity < 0.0:
            velocity = 0.0
        self.state = (position, velocity)
        terminated = position >= self.GOAL_POS and velocity >= 0.0
        return -1.0, terminated

    def _observe(self):
        return np.array(self.state, dtype=np.float64)


class MountainCarContinuous(EnvInstance):
    """Continuous-torque mountain car; quadratic action cost, +100 at goal."""

    spec = ENV_SPECS["mountaincar_continuous"]

    MIN_POS = -1.2
    MAX_POS = 0.6
    MAX_SPEED = 0.07
    GOAL_POS = 0.45
    POWER = 0.0015

    def _initial_state(self):
        return (self.rng.uniform_range(-0.6, -0.4), 0.0)

    def _advance(self, action):
        position, velocity = self.state
        force = float(np.asarray(action, dtype=np.float64).reshape(-1)[0])
        velocity += force * self.POWER - 0.0025 * math.cos(3.0 * position)
        velocity = min(max(velocity, -self.MAX_SPEED), self.MAX_SPEED)
        position += velocity
        position = min(max(position, self.MIN_POS), self.MAX_POS)
        if position == self.MIN_POS and velocity < 0.0:
            velocity = 0.0
        self.state = (position, velocity)
        terminated = position >= self.GOAL_POS and velocity >= 0.0
        reward = -0.1 * force * force
        if terminated:
            reward += 100.0
        return reward, terminated

    def _observe(self):
        return np.array(self.state, dtype=np.float64)


class Pendulum(EnvInstance):
    """Torque-limited pendulum swing-up; never terminates before the time limit."""

    spec = ENV_SPECS["pendulum"]

    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0
    DT = 0.05
    GRAVITY = 10.0
    MASS = 1.0
    LENGTH = 1.0

    def _initial_state(self):
        theta = self.rng.uniform_range(-math.pi, math.pi)
        theta_dot = self.rng.uniform_range(-1.0, 1.0)
        return (theta, theta_dot)

    def _advance(self, action):
        theta, theta_dot = self.state
        u = float(np.asarray(action, dtype=np.float64).reshape(-1)[0])
        u = min(max(u, -self.MAX_TORQUE), self.MAX_TORQUE)
        theta_norm = ((theta + math.pi) % (2.0 * math.pi)) - math.pi
        cost = theta_norm * theta_norm + 0.1 * theta_dot * theta_dot + 0.001 * u * u
        g, m, length, dt = self.GRAVITY, self.MASS, self.LENGTH, self.DT
        new_theta_dot = theta_dot + (
            3.0 * g / (2.0 * length) * math.sin(theta) + 3.0 / (m * length * length) * u
        ) * dt
        new_theta_dot = min(max(new_theta_dot, -self.MAX_SPEED), self.MAX_SPEED)
        theta = theta + new_theta_dot * dt
        self.state = (theta, new_theta_dot)
        return -cost, False

    def _observe(self):
        theta, theta_dot = self.state
        return np.array([math.cos(theta), math.sin(theta), theta_dot], dtype=np.float64)


_ENV_CLASSES: dict[str, type[EnvInstance]] = {
    "cartpole": CartPole,
    "acrobot": Acrobot,
    "mountaincar": MountainCar,
    "mountaincar_continuous": MountainCarContinuous,
    "pendulum": Pendulum,
}


def get_spec(name: str) -> EnvSpec:
    try:
        return ENV_SPECS[name]
    except KeyError:
        raise EnvError(f"unknown environment {name!r}; known: {', '.join(ENV_NAMES)}") from None


def make_env(spec: EnvSpec | str, seed: int) -> EnvInstance:
    """Construct a fresh environment whose trajectories are a pure function
    of the seed (given a fixed action sequence)."""
    name = spec if isinstance(spec, str) else spec.name
    if name not in _ENV_CLASSES:
        raise EnvError(f"unknown environment {name!r}; known: {', '.join(ENV_NAMES)}")
    return _ENV_CLASSES[name](seed)

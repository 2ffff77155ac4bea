"""
Analytic desk-scale environments: pendulum swing-up, cartpole (swing-up and
balance) and a 2-D point-mass reacher.

All equations of motion are integrated with semi-implicit Euler
(velocity first, then position with the new velocity). Angles are observed
as (cos, sin) pairs so states stay continuous under full rotations; the
angle convention is 0 = upright, pi = hanging.

Closed-form rewards (u is the applied, clipped action):

* pendulum: -(2 (1 - cos th) + 0.1 thd^2 + 0.001 u^2)
* cartpole: cos th - 0.01 x^2 - 0.001 u^2
* reacher:  -|p - goal|^2 - 0.01 |u|^2
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Tuple, Type

import numpy as np

from .env_config import EnvConfig, get_env_config, with_overrides
from .errors import EpisodeFinishedError, NonFiniteError, ShapeError
from .seeding import SeedLike, as_generator

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class EnvSpec:
    """MDP surface: dimensions, action box, horizon and discount"""
    name: str
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    episode_length: int
    discount: float

    @property
    def action_range(self) -> np.ndarray:
        return self.action_high - self.action_low

    @property
    def action_mid(self) -> np.ndarray:
        return 0.5 * (self.action_high + self.action_low)

    def clip(self, u: np.ndarray) -> Tuple[np.ndarray, bool]:
        """Clip an action (or a batch of actions) into the box"""
        u = np.asarray(u, dtype=np.float64)
        clipped = np.clip(u, self.action_low, self.action_high)
        return clipped, bool(np.any(clipped != u))

    def to_dict(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "action_low": self.action_low.tolist(),
            "action_high": self.action_high.tolist(),
            "episode_length": self.episode_length,
            "discount": self.discount,
        }


@dataclass
class EnvState:
    x: np.ndarray
    t: int = 0
    clipped: bool = False  # last action had to be clipped


@dataclass
class Transition:
    x: np.ndarray
    u: np.ndarray
    r: float
    x_next: np.ndarray
    done: bool


@dataclass
class Episode:
    states: np.ndarray  # (T+1, n)
    actions: np.ndarray  # (T, m)
    rewards: np.ndarray  # (T,)
    info: Dict[str, object] = field(default_factory=dict)

    @property
    def total_return(self) -> float:
        return float(np.sum(self.rewards))


class Environment:
    """Base class; subclasses provide batch dynamics, reward and rho_0"""

    state_dim: int = 0

    def __init__(self, name: str, config: EnvConfig):
        self.name = name
        self.config = config
        self.physics = dict(config.physics)
        self.dt = config.dt
        self.spec = EnvSpec(
            name=name,
            state_dim=self.state_dim,
            action_dim=len(config.action_low),
            action_low=np.asarray(config.action_low, dtype=np.float64),
            action_high=np.asarray(config.action_high, dtype=np.float64),
            episode_length=config.episode_length,
            discount=config.discount,
        )

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, physics={self.physics})"

    # subclass hooks, all batched over rows
    def _advance(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _reward(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _check_batch(self, X, U) -> Tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=np.float64)
        U = np.asarray(U, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.spec.state_dim:
            raise ShapeError(f"{self.name} state batch", (X.shape[0] if X.ndim else 0, self.spec.state_dim), X.shape)
        if U.shape != (X.shape[0], self.spec.action_dim):
            raise ShapeError(f"{self.name} action batch", (X.shape[0], self.spec.action_dim), U.shape)
        return X, U

    def reset(self, seed: SeedLike = None) -> EnvState:
        """Draw an initial state from rho_0"""
        rng = as_generator(seed)
        return EnvState(self._initial_state(rng), 0)

    def step(self, state: EnvState, u) -> Tuple[EnvState, float, bool]:
        if state.t >= self.spec.episode_length:
            raise EpisodeFinishedError(f"{self.name}: episode finished at step {state.t}")
        x = np.asarray(state.x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        if x.shape != (self.spec.state_dim,):
            raise ShapeError(f"{self.name} state", (self.spec.state_dim,), x.shape)
        if u.shape != (self.spec.action_dim,):
            raise ShapeError(f"{self.name} action", (self.spec.action_dim,), u.shape)
        u, clipped = self.spec.clip(u)
        x_next = self._advance(x[None, :], u[None, :])[0]
        reward = float(self._reward(x[None, :], u[None, :])[0])
        if not (np.all(np.isfinite(x_next)) and np.isfinite(reward)):
            raise NonFiniteError("non-finite state", context=f"{self.name} step {state.t}")
        t = state.t + 1
        return EnvState(x_next, t, clipped), reward, t >= self.spec.episode_length

    def step_batch(self, X, U) -> np.ndarray:
        """Next states for a batch; actions are clipped to the box"""
        X, U = self._check_batch(X, U)
        U, _ = self.spec.clip(U)
        return self._advance(X, U)

    def reward(self, x, u) -> float:
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        return float(self.reward_batch(x[None, :], u[None, :])[0])

    def cost(self, x, u) -> float:
        return -self.reward(x, u)

    def reward_batch(self, X, U) -> np.ndarray:
        X, U = self._check_batch(X, U)
        return self._reward(X, U)

    def cost_batch(self, X, U) -> np.ndarray:
        return -self.reward_batch(X, U)

    def perturbed(self, **overrides) -> "Environment":
        """Same environment with some constants replaced (a mismatched model)"""
        return type(self)(self.name, with_overrides(self.config, overrides))

    def biased(self, scale: float = 1.2) -> "Environment":
        """Scale the configured bias constant (pole length by default)"""
        key = self.config.bias_key
        return self.perturbed(**{key: self.physics[key] * scale})


class Pendulum(Environment):
    """State [cos th, sin th, thd]; thdd = (g/l) sin th + u / (m l^2)"""

    state_dim = 3

    @staticmethod
    def make_state(theta: float, theta_dot: float) -> np.ndarray:
        return np.array([np.cos(theta), np.sin(theta), theta_dot], dtype=np.float64)

    @staticmethod
    def angle(x: np.ndarray) -> np.ndarray:
        """Angle in [0, 2 pi)"""
        x = np.asarray(x)
        return np.mod(np.arctan2(x[..., 1], x[..., 0]), 2.0 * np.pi)

    @staticmethod
    def angle_from_upright(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return np.abs(np.arctan2(x[..., 1], x[..., 0]))

    def energy(self, x: np.ndarray) -> np.ndarray:
        """Total mechanical energy measured from the hanging position"""
        p = self.physics
        x = np.asarray(x)
        kinetic = 0.5 * p["mass"] * p["length"] ** 2 * x[..., 2] ** 2
        potential = p["mass"] * p["gravity"] * p["length"] * (x[..., 0] + 1.0)
        return kinetic + potential

    def _advance(self, X, U):
        p = self.physics
        theta = np.arctan2(X[:, 1], X[:, 0])
        theta_ddot = (p["gravity"] / p["length"]) * np.sin(theta) + U[:, 0] / (p["mass"] * p["length"] ** 2)
        theta_dot = np.clip(X[:, 2] + theta_ddot * self.dt, -p["max_speed"], p["max_speed"])
        theta = theta + theta_dot * self.dt
        return np.stack([np.cos(theta), np.sin(theta), theta_dot], axis=1)

    def _reward(self, X, U):
        return -(2.0 * (1.0 - X[:, 0]) + 0.1 * X[:, 2] ** 2 + 0.001 * U[:, 0] ** 2)

    def _initial_state(self, rng):
        noise = rng.uniform(-self.config.init_noise, self.config.init_noise, size=2)
        base = np.pi if self.config.init_mode == "hanging" else 0.0
        return self.make_state(base + noise[0], noise[1])


class Cartpole(Environment):
    """
    State [x, xd, cos th, sin th, thd]; classic cart-pole equations with
    `length` the pole half-length and a force on the cart.
    """

    state_dim = 5

    @staticmethod
    def make_state(position: float, velocity: float, theta: float, theta_dot: float) -> np.ndarray:
        return np.array([position, velocity, np.cos(theta), np.sin(theta), theta_dot], dtype=np.float64)

    @staticmethod
    def angle_from_upright(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return np.abs(np.arctan2(x[..., 3], x[..., 2]))

    def _advance(self, X, U):
        p = self.physics
        total_mass = p["cart_mass"] + p["pole_mass"]
        pole_ml = p["pole_mass"] * p["length"]
        theta = np.arctan2(X[:, 3], X[:, 2])
        sin, cos = np.sin(theta), np.cos(theta)
        theta_dot = X[:, 4]

        temp = (U[:, 0] + pole_ml * theta_dot ** 2 * sin) / total_mass
        theta_ddot = (p["gravity"] * sin - cos * temp) / (
            p["length"] * (4.0 / 3.0 - p["pole_mass"] * cos ** 2 / total_mass)
        )
        x_ddot = temp - pole_ml * theta_ddot * cos / total_mass

        velocity = X[:, 1] + x_ddot * self.dt
        position = X[:, 0] + velocity * self.dt
        theta_dot = theta_dot + theta_ddot * self.dt
        theta = theta + theta_dot * self.dt
        return np.stack([position, velocity, np.cos(theta), np.sin(theta), theta_dot], axis=1)

    def _reward(self, X, U):
        return X[:, 2] - 0.01 * X[:, 0] ** 2 - 0.001 * U[:, 0] ** 2

    def _initial_state(self, rng):
        noise = rng.uniform(-self.config.init_noise, self.config.init_noise, size=4)
        base = np.pi if self.config.init_mode == "hanging" else 0.0
        return self.make_state(noise[0], noise[1], base + noise[2], noise[3])


class Reacher(Environment):
    """State [px, py, vx, vy]; the action is a force on a damped point mass"""

    state_dim = 4

    @property
    def goal(self) -> np.ndarray:
        return np.array([self.physics["goal_x"], self.physics["goal_y"]])

    def _advance(self, X, U):
        p = self.physics
        velocity = X[:, 2:4] + (U / p["mass"] - p["damping"] * X[:, 2:4]) * self.dt
        position = X[:, 0:2] + velocity * self.dt
        return np.concatenate([position, velocity], axis=1)

    def _reward(self, X, U):
        return -np.sum((X[:, 0:2] - self.goal) ** 2, axis=1) - 0.01 * np.sum(U ** 2, axis=1)

    def _initial_state(self, rng):
        return rng.uniform(-self.config.init_noise, self.config.init_noise, size=4)


ENV_CLASSES: Dict[str, Type[Environment]] = {
    "pendulum": Pendulum,
    "cartpole": Cartpole,
    "reacher": Reacher,
}


def make_env(name: str, overrides: Optional[Mapping[str, object]] = None) -> Environment:
    """Build a registered environment, optionally with constants overridden"""
    config = with_overrides(get_env_config(name), overrides)
    return ENV_CLASSES[config.kind](name, config)


def run_episode(env: Environment, act: Callable[[np.ndarray, int], np.ndarray],
                seed: SeedLike = None, steps: Optional[int] = None,
                start: Optional[EnvState] = None) -> Episode:
    """Roll `act(x, t)` in the environment for one episode"""
    state = start if start is not None else env.reset(seed)
    steps = env.spec.episode_length - state.t if steps is None else steps
    states, actions, rewards = [state.x], [], []
    clipped = 0
    for _ in range(steps):
        u = np.asarray(act(state.x, state.t), dtype=np.float64).reshape(-1)
        state, reward, done = env.step(state, u)
        clipped += int(state.clipped)
        states.append(state.x)
        actions.append(env.spec.clip(u)[0])
        rewards.append(reward)
        if done:
            break
    return Episode(np.array(states), np.array(actions).reshape(-1, env.spec.action_dim),
                   np.array(rewards), {"clipped_steps": clipped})


def run_episodes_batch(env: Environment, act_batch: Callable[[np.ndarray, int], np.ndarray],
                       starts: np.ndarray, steps: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Roll a batch of episodes in lock step. `act_batch(X, t)` maps (B, n)
    states to (B, m) actions. Returns (returns (B,), states (B, T+1, n)).
    """
    X = np.asarray(starts, dtype=np.float64)
    steps = env.spec.episode_length if steps is None else steps
    returns = np.zeros(X.shape[0])
    trajectory = [X]
    for t in range(steps):
        U, _ = env.spec.clip(act_batch(X, t))
        returns += env.reward_batch(X, U)
        X = env.step_batch(X, U)
        if not np.all(np.isfinite(X)):
            raise NonFiniteError("non-finite state", context=f"{env.name} step {t}")
        trajectory.append(X)
    return returns, np.stack(trajectory, axis=1)

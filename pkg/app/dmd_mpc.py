"""
Dynamic mirror descent MPC over fixed-covariance Gaussian control sequences.

A plan is the mean sequence mu (H x m) of independent Gaussians with a shared
diagonal covariance Sigma. For this family the natural parameters are
eta = mu / Sigma, the Bregman divergence of the log-partition is the KL
divergence, and a mirror-descent step in natural coordinates is a plain
gradient step on the mean:

    mu = mu_tilde - alpha * grad_eta J(mu_tilde)

CEM and MPPI are the special cases whose gradient is mu_tilde - g, with g an
elite-weighted (CEM) or softmax-weighted (MPPI) average of sampled controls.
Each real time step starts from a warm start produced by a shift operator:
the previous plan shifted left, or the outer policy rolled through the model.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .config import MpcConfig
from .envs import Environment, EnvSpec, Episode
from .errors import ConfigError, NonFiniteError, PlanningError, ShapeError, WeightingModeError
from .seeding import SeedLike, as_generator

logger = logging.getLogger(__name__)

# batch callables: dynamics(X, U, rng) -> X_next, cost(X, U) -> (B,),
# terminal(X) -> (B,), policy(X) -> U
Dynamics = Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]
BatchCost = Callable[[np.ndarray, np.ndarray], np.ndarray]
BatchTerminal = Callable[[np.ndarray], np.ndarray]
BatchPolicy = Callable[[np.ndarray], np.ndarray]
Bounds = Tuple[np.ndarray, np.ndarray]


@dataclass
class GaussianControlSequence:
    mean: np.ndarray  # (H, m)
    sigma: np.ndarray  # (m,) diagonal covariance shared by every step

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if self.mean.ndim != 2:
            raise ShapeError("control sequence mean", (-1, self.sigma.size), self.mean.shape)
        if self.sigma.shape != (self.mean.shape[1],):
            raise ShapeError("control covariance", (self.mean.shape[1],), self.sigma.shape)
        if np.any(self.sigma <= 0.0):
            raise ConfigError("control covariance entries must be positive")

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]

    @property
    def action_dim(self) -> int:
        return self.mean.shape[1]

    @property
    def natural_params(self) -> np.ndarray:
        return self.mean / self.sigma

    @classmethod
    def from_natural(cls, eta: np.ndarray, sigma: np.ndarray) -> "GaussianControlSequence":
        return cls(np.asarray(eta) * sigma, sigma)

    def with_mean(self, mean: np.ndarray) -> "GaussianControlSequence":
        return GaussianControlSequence(mean, self.sigma.copy())


@dataclass
class RolloutBatch:
    states: np.ndarray  # (M, H+1, n)
    controls: np.ndarray  # (M, H, m), clipped
    costs: np.ndarray  # (M,); +inf marks a diverged rollout

    @property
    def size(self) -> int:
        return self.costs.shape[0]

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.costs)


@dataclass
class PlanningProblem:
    """What a plan is scored against: model, costs, bounds and discount"""
    dynamics: Dynamics
    cost_fn: BatchCost
    action_low: np.ndarray
    action_high: np.ndarray
    terminal_cost_fn: Optional[BatchTerminal] = None
    gamma: float = 1.0
    blowup: float = 1e6

    @property
    def bounds(self) -> Bounds:
        return self.action_low, self.action_high

    @classmethod
    def for_env(cls, env: Environment, dynamics: Optional[Dynamics] = None,
                terminal_cost_fn: Optional[BatchTerminal] = None,
                gamma: Optional[float] = None, blowup: float = 1e6) -> "PlanningProblem":
        """Costs and bounds from `env`; its exact equations unless `dynamics` is given"""
        if dynamics is None:
            def dynamics(X, U, rng=None):
                return env.step_batch(X, U)
        return cls(
            dynamics=dynamics,
            cost_fn=env.cost_batch,
            action_low=env.spec.action_low,
            action_high=env.spec.action_high,
            terminal_cost_fn=terminal_cost_fn,
            gamma=env.spec.discount if gamma is None else gamma,
            blowup=blowup,
        )


@dataclass
class PlanResult:
    plan: GaussianControlSequence
    warm_start: GaussianControlSequence
    batch: RolloutBatch

    @property
    def action(self) -> np.ndarray:
        return self.plan.mean[0].copy()


def default_sigma(spec: EnvSpec, scale: float = 0.3) -> np.ndarray:
    """Sigma = (scale * action_range)^2 per action dimension"""
    return (scale * spec.action_range) ** 2


def value_terminal(value_fn: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """Terminal cost c_H(x) = -V(x)"""
    def terminal_cost(x):
        return -np.asarray(value_fn(x), dtype=np.float64)
    return terminal_cost


def total_cost(states: np.ndarray, controls: np.ndarray, cost_fn: Callable, terminal_cost_fn: Optional[Callable] = None,
               gamma: float = 1.0) -> float:
    """
    sum_h gamma^h c(x_h, u_h) + gamma^H c_H(x_H) for one trajectory with H+1
    states and H controls; c_H defaults to 0.
    """
    states = np.asarray(states, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    horizon = controls.shape[0]
    if states.shape[0] != horizon + 1:
        raise ShapeError("trajectory states", (horizon + 1,), (states.shape[0],))
    total, discount = 0.0, 1.0
    for h in range(horizon):
        total += discount * float(cost_fn(states[h], controls[h]))
        discount *= gamma
    if terminal_cost_fn is not None:
        total += discount * float(terminal_cost_fn(states[horizon]))
    if not np.isfinite(total):
        raise NonFiniteError("non-finite trajectory cost")
    return total


def rollout_costs(states: np.ndarray, controls: np.ndarray, problem: PlanningProblem) -> np.ndarray:
    """Batched total_cost over M trajectories; non-finite results become +inf"""
    n_rollouts, horizon = controls.shape[0], controls.shape[1]
    costs = np.zeros(n_rollouts)
    discount = 1.0
    with np.errstate(all="ignore"):
        for h in range(horizon):
            costs += discount * problem.cost_fn(states[:, h], controls[:, h])
            discount *= problem.gamma
        if problem.terminal_cost_fn is not None:
            costs += discount * np.asarray(problem.terminal_cost_fn(states[:, horizon])).reshape(-1)
    costs[~np.isfinite(costs)] = np.inf
    return costs


def left_shift(prev: GaussianControlSequence) -> GaussianControlSequence:
    """mu_tilde_h = mu_{h+1}, last entry repeated"""
    return prev.with_mean(np.concatenate([prev.mean[1:], prev.mean[-1:]], axis=0))


def policy_rollout_means(policy: BatchPolicy, x_t: np.ndarray, horizon: int, dynamics: Dynamics,
                         rng: np.random.Generator, bounds: Optional[Bounds] = None) -> np.ndarray:
    """mu_tilde_h = pi(x_h) along the model trajectory started at x_t"""
    x = np.asarray(x_t, dtype=np.float64)[None, :]
    means = []
    for _ in range(horizon):
        u = np.asarray(policy(x), dtype=np.float64).reshape(1, -1)
        if bounds is not None:
            u = np.clip(u, bounds[0], bounds[1])
        means.append(u[0])
        x = dynamics(x, u, rng)
    return np.array(means)


def shift(prev: Optional[GaussianControlSequence], policy: Optional[BatchPolicy], x_t: Optional[np.ndarray],
          mode: str, dynamics: Optional[Dynamics] = None, rng: SeedLike = None,
          bounds: Optional[Bounds] = None, sigma: Optional[np.ndarray] = None,
          horizon: Optional[int] = None) -> GaussianControlSequence:
    """Warm start eta_tilde for the current round"""
    if mode == "left_shift":
        if prev is None:
            raise PlanningError("left_shift needs a previous plan")
        return left_shift(prev)
    if mode != "policy_shift":
        raise ConfigError(f"unknown shift mode '{mode}'")
    if policy is None:
        raise PlanningError("policy_shift needs a policy")
    if dynamics is None:
        raise PlanningError("policy_shift needs a model to roll the policy through")
    if sigma is None:
        if prev is None:
            raise ConfigError("policy_shift needs sigma when there is no previous plan")
        sigma = prev.sigma
    if horizon is None:
        if prev is None:
            raise ConfigError("policy_shift needs a horizon when there is no previous plan")
        horizon = prev.horizon
    means = policy_rollout_means(policy, x_t, horizon, dynamics, as_generator(rng), bounds)
    return GaussianControlSequence(means, np.array(sigma, dtype=np.float64))


def sample_rollouts(problem: PlanningProblem, x0: np.ndarray, eta_tilde: GaussianControlSequence,
                    n_rollouts: int, seed: SeedLike = None) -> RolloutBatch:
    """
    M trajectories with controls mu_tilde + Sigma^(1/2) eps clipped to the
    action box, advanced through the problem's dynamics. Rollouts whose state
    leaves the blow-up bound get cost +inf.
    """
    rng = as_generator(seed)
    x0 = np.asarray(x0, dtype=np.float64)
    horizon, action_dim = eta_tilde.mean.shape
    eps = rng.standard_normal((n_rollouts, horizon, action_dim))
    controls = np.clip(eta_tilde.mean + np.sqrt(eta_tilde.sigma) * eps, problem.action_low, problem.action_high)

    states = np.empty((n_rollouts, horizon + 1, x0.size))
    states[:, 0] = x0
    with np.errstate(all="ignore"):
        for h in range(horizon):
            states[:, h + 1] = problem.dynamics(states[:, h], controls[:, h], rng)
        diverged = ~np.all(np.isfinite(states) & (np.abs(states) <= problem.blowup), axis=(1, 2))

    costs = rollout_costs(states, controls, problem)
    costs[diverged] = np.inf
    n_bad = int(np.sum(~np.isfinite(costs)))
    if n_bad:
        logger.warning(f"{n_bad} of {n_rollouts} rollouts diverged")
    return RolloutBatch(states, controls, costs)


def elite_indices(costs: np.ndarray, elite_fraction: float) -> np.ndarray:
    """ceil(p M) lowest costs, ties broken by rollout index"""
    costs = np.asarray(costs, dtype=np.float64)
    count = max(1, int(np.ceil(elite_fraction * costs.size - 1e-9)))
    return np.argsort(costs, kind="stable")[:count]


def _exp_weights(costs: np.ndarray, temperature: float) -> np.ndarray:
    finite = np.isfinite(costs)
    if not np.any(finite):
        raise PlanningError("every rollout cost is infinite")
    shifted = np.where(finite, costs - np.min(costs[finite]), np.inf)
    weights = np.exp(-shifted / temperature)
    return weights / np.sum(weights)


def _weighted_controls(controls: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.tensordot(weights, controls, axes=1)


def elite_target(batch: RolloutBatch, elite_fraction: float, temperature: float,
                 weighting: str = "exp") -> np.ndarray:
    """
    g: weighted mean of elite control sequences. `exp` weights by
    exp(-(C - C_min) / lambda); `literal` weights by the costs themselves.
    """
    elites = elite_indices(batch.costs, elite_fraction)
    elite_costs = batch.costs[elites]
    if not np.all(np.isfinite(elite_costs)):
        raise PlanningError(f"only {int(np.sum(batch.finite))} finite rollouts for {elites.size} elites")
    elites = np.sort(elites)
    elite_costs = batch.costs[elites]
    if weighting == "exp":
        weights = _exp_weights(elite_costs, temperature)
    elif weighting == "literal":
        total = np.sum(elite_costs)
        if total == 0.0 or (np.any(elite_costs > 0.0) and np.any(elite_costs < 0.0)):
            raise WeightingModeError(
                "literal cost weighting needs same-sign elite costs with a non-zero sum; use weighting 'exp'"
            )
        weights = elite_costs / total
    else:
        raise ConfigError(f"unknown weighting mode '{weighting}'")
    return _weighted_controls(batch.controls[elites], weights)


def dmd_step(mean_tilde: np.ndarray, grad_natural: np.ndarray, alpha: float,
             bounds: Optional[Bounds] = None) -> np.ndarray:
    """
    Mirror-descent step for fixed-covariance Gaussians: eta = eta_tilde -
    alpha Sigma^-1 grad_eta J, returned in mean coordinates.
    """
    mean = np.asarray(mean_tilde, dtype=np.float64) - alpha * np.asarray(grad_natural, dtype=np.float64)
    if bounds is not None:
        mean = np.clip(mean, bounds[0], bounds[1])
    return mean


def score_function_gradient(eta_tilde: GaussianControlSequence, batch: RolloutBatch) -> np.ndarray:
    """Monte-Carlo grad_eta E[C] = E[C (u - mu_tilde)] over finite rollouts"""
    finite = batch.finite
    if not np.any(finite):
        raise PlanningError("every rollout cost is infinite")
    costs = batch.costs[finite]
    deviations = batch.controls[finite] - eta_tilde.mean
    return _weighted_controls(deviations, costs / costs.size)


def cem_update(eta_tilde: GaussianControlSequence, batch: RolloutBatch, alpha: float, elite_fraction: float,
               temperature: float, weighting: str = "exp", bounds: Optional[Bounds] = None) -> GaussianControlSequence:
    """mu = (1 - alpha) mu_tilde + alpha g over the elite rollouts"""
    g = elite_target(batch, elite_fraction, temperature, weighting)
    mean = (1.0 - alpha) * eta_tilde.mean + alpha * g
    if bounds is not None:
        mean = np.clip(mean, bounds[0], bounds[1])
    return eta_tilde.with_mean(mean)


def mppi_update(eta_tilde: GaussianControlSequence, batch: RolloutBatch, temperature: float,
                bounds: Optional[Bounds] = None) -> GaussianControlSequence:
    """mu = sum_i softmax(-C_i / lambda) U_i over all rollouts"""
    if temperature <= 0.0:
        raise ConfigError("temperature must be positive")
    mean = _weighted_controls(batch.controls, _exp_weights(batch.costs, temperature))
    if bounds is not None:
        mean = np.clip(mean, bounds[0], bounds[1])
    return eta_tilde.with_mean(mean)


def kl_gaussian(mu1: np.ndarray, mu2: np.ndarray, sigma: np.ndarray) -> float:
    """KL between equal-covariance diagonal Gaussians, summed over every entry"""
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    if mu1.shape != mu2.shape:
        raise ShapeError("kl means", mu1.shape, mu2.shape)
    return float(np.sum((mu1 - mu2) ** 2 / (2.0 * np.asarray(sigma, dtype=np.float64))))


def dmd_update(eta_tilde: GaussianControlSequence, batch: RolloutBatch, config: MpcConfig,
               bounds: Optional[Bounds] = None) -> GaussianControlSequence:
    """Apply the configured objective's update"""
    if config.objective == "mppi":
        return mppi_update(eta_tilde, batch, config.temperature, bounds)
    return cem_update(eta_tilde, batch, config.alpha, config.elite_fraction,
                      config.temperature, config.weighting, bounds)


class DmdMpcPlanner:
    """Receding-horizon DMD-MPC: shift, sample, update once per real time step"""

    def __init__(self, problem: PlanningProblem, config: MpcConfig, sigma: Sequence[float],
                 policy: Optional[BatchPolicy] = None):
        self.problem = problem
        self.config = config
        self.sigma = np.asarray(sigma, dtype=np.float64)
        self.policy = policy
        if config.shift == "policy_shift" and policy is None:
            raise PlanningError("policy_shift planner needs a policy")
        self._prev: Optional[GaussianControlSequence] = None

    def reset(self, initial_mean: Optional[np.ndarray] = None) -> None:
        """Forget the previous plan; left_shift restarts from `initial_mean` or the box midpoint"""
        if initial_mean is None:
            self._prev = None
        else:
            self._prev = GaussianControlSequence(initial_mean, self.sigma.copy())

    def warm_start(self, x_t: np.ndarray, rng: np.random.Generator) -> GaussianControlSequence:
        if self.config.shift == "left_shift":
            if self._prev is None:
                mid = 0.5 * (self.problem.action_low + self.problem.action_high)
                return GaussianControlSequence(np.tile(mid, (self.config.horizon, 1)), self.sigma.copy())
            return left_shift(self._prev)
        return shift(None, self.policy, x_t, "policy_shift", self.problem.dynamics, rng,
                     self.problem.bounds, self.sigma, self.config.horizon)

    def plan(self, x_t: np.ndarray, seed: SeedLike = None) -> PlanResult:
        rng = as_generator(seed)
        eta_tilde = self.warm_start(x_t, rng)
        eta = eta_tilde
        for _ in range(self.config.iterations):
            batch = sample_rollouts(self.problem, x_t, eta, self.config.rollouts, rng)
            eta = dmd_update(eta, batch, self.config, self.problem.bounds)
        self._prev = eta
        logger.debug(f"planned from x={np.array2string(np.asarray(x_t), precision=3)}, "
                     f"best cost {np.min(batch.costs):.4f}")
        return PlanResult(eta, eta_tilde, batch)


def run_mpc_episode(env: Environment, planner: DmdMpcPlanner, seed: SeedLike = None,
                    steps: Optional[int] = None) -> Episode:
    """Closed-loop episode in `env` applying the first planned action each step"""
    rng = as_generator(seed)
    state = env.reset(rng)
    planner.reset()
    steps = env.spec.episode_length if steps is None else steps
    states, actions, rewards = [state.x], [], []
    for _ in range(steps):
        u = planner.plan(state.x, rng).action
        state, reward, done = env.step(state, u)
        states.append(state.x)
        actions.append(u)
        rewards.append(reward)
        if done:
            break
    return Episode(np.array(states), np.array(actions), np.array(rewards))


def collect_model_trajectory(problem: PlanningProblem, plan_mean: np.ndarray, x0: np.ndarray,
                             reward_fn: BatchCost, seed: SeedLike = None):
    """
    Roll the plan mean through the model from x0 and label each transition
    with the known reward. Stops before the first diverged state.
    Returns (x, u, r, x_next, done) arrays.
    """
    rng = as_generator(seed)
    x0 = np.asarray(x0, dtype=np.float64)
    controls = np.clip(np.asarray(plan_mean, dtype=np.float64), problem.action_low, problem.action_high)
    x = x0[None, :]
    xs, us, rs, xns = [], [], [], []
    for h in range(controls.shape[0]):
        u = controls[h][None, :]
        with np.errstate(all="ignore"):
            x_next = problem.dynamics(x, u, rng)
        if not np.all(np.isfinite(x_next) & (np.abs(x_next) <= problem.blowup)):
            logger.warning(f"model trajectory diverged at step {h}, keeping {h} transitions")
            break
        xs.append(x[0])
        us.append(u[0])
        rs.append(float(reward_fn(x, u)[0]))
        xns.append(x_next[0])
        x = x_next
    n, m = x0.size, controls.shape[1]
    return (np.array(xs).reshape(-1, n), np.array(us).reshape(-1, m), np.array(rs),
            np.array(xns).reshape(-1, n), np.zeros(len(rs), dtype=bool))

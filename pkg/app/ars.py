"""
Augmented Random Search for linear state-feedback policies.

One iteration samples N Gaussian direction matrices, evaluates the policy at
theta +/- nu*delta with frozen state-normalization statistics, keeps the b
directions with the best max(r+, r-), and steps

    theta += alpha / (b * sigma_R) * sum_k (r+_k - r-_k) delta_k

with sigma_R the standard deviation of the 2b returns used. The running state
statistics are refreshed after the update. The accelerated variant mixes the
fresh iterate with an exponentially weighted average of past iterates.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ArsConfig
from .envs import Environment, run_episodes_batch
from .errors import ConfigError, ShapeError
from .seeding import SeedLike, as_generator

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-8

# evaluate(thetas (B, m, n), rng) -> (returns (B,), visited states (K, n) or None)
Evaluator = Callable[[np.ndarray, np.random.Generator], Tuple[np.ndarray, Optional[np.ndarray]]]


@dataclass
class LinearPolicy:
    theta: np.ndarray  # (m, n)
    mean: np.ndarray  # (n,) running state mean
    var: np.ndarray  # (n,) running state variance
    count: int = 0
    normalize: bool = True
    action_low: Optional[np.ndarray] = None
    action_high: Optional[np.ndarray] = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.theta.ndim != 2:
            raise ShapeError("policy matrix", (-1, self.mean.size), self.theta.shape)
        n = self.theta.shape[1]
        if self.mean.shape != (n,) or self.var.shape != (n,):
            raise ShapeError("policy state statistics", (n,), self.mean.shape)
        if self.action_low is not None:
            self.action_low = np.asarray(self.action_low, dtype=np.float64)
            self.action_high = np.asarray(self.action_high, dtype=np.float64)

    @property
    def state_dim(self) -> int:
        return self.theta.shape[1]

    @property
    def action_dim(self) -> int:
        return self.theta.shape[0]

    @classmethod
    def zeros(cls, state_dim: int, action_dim: int, action_low=None, action_high=None,
              normalize: bool = True) -> "LinearPolicy":
        return cls(np.zeros((action_dim, state_dim)), np.zeros(state_dim), np.ones(state_dim),
                   0, normalize, action_low, action_high)

    def copy(self, theta: Optional[np.ndarray] = None) -> "LinearPolicy":
        return LinearPolicy(
            self.theta.copy() if theta is None else np.array(theta, dtype=np.float64),
            self.mean.copy(), self.var.copy(), self.count, self.normalize,
            None if self.action_low is None else self.action_low.copy(),
            None if self.action_high is None else self.action_high.copy(),
        )

    def normalized(self, x: np.ndarray) -> np.ndarray:
        if not self.normalize:
            return np.asarray(x, dtype=np.float64)
        return (x - self.mean) / np.sqrt(np.maximum(self.var, VAR_FLOOR))

    def clip(self, u: np.ndarray) -> np.ndarray:
        if self.action_low is None:
            return u
        return np.clip(u, self.action_low, self.action_high)

    def update_stats(self, states: np.ndarray) -> None:
        """Merge a batch of visited states into the running mean/variance"""
        states = np.asarray(states, dtype=np.float64).reshape(-1, self.state_dim)
        k = states.shape[0]
        if k == 0:
            return
        batch_mean = states.mean(axis=0)
        batch_var = states.var(axis=0)
        if self.count == 0:
            self.mean, self.var, self.count = batch_mean, batch_var, k
            return
        total = self.count + k
        delta = batch_mean - self.mean
        m2 = self.var * self.count + batch_var * k + delta ** 2 * self.count * k / total
        self.mean = self.mean + delta * k / total
        self.var = m2 / total
        self.count = total


def policy_act(policy: LinearPolicy, x: np.ndarray) -> np.ndarray:
    """u = theta @ normalized(x), clipped to the action box"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != policy.state_dim:
        raise ShapeError("policy input", (policy.state_dim,), x.shape)
    return policy.clip(policy.normalized(x) @ policy.theta.T)


def policy_act_batch(policy: LinearPolicy, X: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Row b acts with thetas[b] under the policy's (frozen) normalization"""
    return policy.clip(np.einsum("bmn,bn->bm", thetas, policy.normalized(X)))


@dataclass
class ArsReport:
    iteration: int
    mean_return: float
    max_return: float
    sigma_r: float
    skipped_scaling: bool
    top_directions: List[int] = field(default_factory=list)


def top_directions(r_plus: np.ndarray, r_minus: np.ndarray, count: int) -> np.ndarray:
    """Indices of the `count` largest max(r+, r-), ties to the lower index"""
    scores = np.maximum(r_plus, r_minus)
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:count]


def ars_update(theta: np.ndarray, deltas: np.ndarray, r_plus: np.ndarray, r_minus: np.ndarray,
               step_size: float, top_b: int) -> Tuple[np.ndarray, float, bool, np.ndarray]:
    """Returns (new theta, sigma_R used, whether sigma_R was zero, top indices)"""
    r_plus = np.asarray(r_plus, dtype=np.float64)
    r_minus = np.asarray(r_minus, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.shape[1:] != theta.shape or deltas.shape[0] != r_plus.size or r_plus.shape != r_minus.shape:
        raise ShapeError("ars directions", (r_plus.size,) + theta.shape, deltas.shape)
    if not 1 <= top_b <= r_plus.size:
        raise ConfigError(f"top_b={top_b} outside [1, {r_plus.size}]")
    top = top_directions(r_plus, r_minus, top_b)
    sigma_r = float(np.std(np.concatenate([r_plus[top], r_minus[top]])))
    skipped = sigma_r == 0.0
    if skipped:
        sigma_r = 1.0
    step = np.tensordot(r_plus[top] - r_minus[top], deltas[top], axes=1)
    return theta + step_size / (top_b * sigma_r) * step, sigma_r, skipped, top


def accelerated_step(history: Sequence[np.ndarray], beta: float, gamma_mix: float) -> np.ndarray:
    """
    theta_acc = gamma_mix * fresh + (1 - gamma_mix) * avg, where fresh is
    history[-1] and avg weights the earlier iterates by (1 - beta)^i
    (i = 0 for the most recent) normalized to sum to one.
    """
    if len(history) == 0:
        raise ConfigError("accelerated_step needs a non-empty history")
    fresh = np.asarray(history[-1], dtype=np.float64)
    past = [np.asarray(h, dtype=np.float64) for h in reversed(history[:-1])]
    if not past:
        return fresh.copy()
    weights = (1.0 - beta) ** np.arange(len(past))
    weights = weights / weights.sum()
    average = np.tensordot(weights, np.stack(past), axes=1)
    return gamma_mix * fresh + (1.0 - gamma_mix) * average


def env_evaluator(env: Environment, policy: LinearPolicy, episode_length: Optional[int] = None) -> Evaluator:
    """
    Batched episode evaluator. Perturbation pairs share their start state:
    row k and row k + B/2 start from the same draw of rho_0.
    """
    def evaluate(thetas: np.ndarray, rng: np.random.Generator):
        pairs = thetas.shape[0] // 2
        starts = np.stack([env.reset(rng).x for _ in range(pairs)])
        starts = np.concatenate([starts, starts], axis=0)
        returns, states = run_episodes_batch(
            env, lambda X, t: policy_act_batch(policy, X, thetas), starts, episode_length
        )
        return returns, states.reshape(-1, env.spec.state_dim)
    return evaluate


def ars_iteration(policy: LinearPolicy, env: Optional[Environment], config: ArsConfig, seed: SeedLike = None,
                  evaluate: Optional[Evaluator] = None, iteration: int = 0) -> Tuple[LinearPolicy, ArsReport]:
    """One ARS step; returns a new policy and leaves `policy` untouched"""
    rng = as_generator(seed)
    if evaluate is None:
        if env is None:
            raise ConfigError("ars_iteration needs an environment or an evaluator")
        evaluate = env_evaluator(env, policy, config.episode_length)
    n_dirs = config.directions
    deltas = rng.standard_normal((n_dirs,) + policy.theta.shape)
    thetas = np.concatenate([policy.theta + config.noise * deltas, policy.theta - config.noise * deltas])
    returns, visited = evaluate(thetas, rng)
    r_plus, r_minus = returns[:n_dirs], returns[n_dirs:]

    theta, sigma_r, skipped, top = ars_update(policy.theta, deltas, r_plus, r_minus,
                                              config.step_size, config.top_directions)
    if skipped:
        logger.warning(f"ARS iteration {iteration}: return spread is zero, step left unscaled")
    updated = policy.copy(theta)
    if policy.normalize and visited is not None:
        updated.update_stats(visited)
    report = ArsReport(iteration, float(np.mean(returns)), float(np.max(returns)), sigma_r, skipped,
                       [int(i) for i in top])
    logger.debug(f"ARS iteration {iteration}: mean return {report.mean_return:.3f}, sigma_R {sigma_r:.4f}")
    return updated, report


def train_linear_policy(policy: LinearPolicy, env: Optional[Environment], config: ArsConfig,
                        seed: SeedLike = None, evaluate: Optional[Evaluator] = None,
                        iterations: Optional[int] = None) -> Tuple[LinearPolicy, List[ArsReport]]:
    """Run ARS iterations, applying the accelerated mix when configured"""
    rng = as_generator(seed)
    iterations = config.iterations if iterations is None else iterations
    history = [policy.theta.copy()]
    reports = []
    for j in range(iterations):
        policy, report = ars_iteration(policy, env, config, rng, evaluate, iteration=j)
        if config.accelerated:
            policy.theta = accelerated_step(history + [policy.theta], config.acc_beta, config.acc_mix)
        history.append(policy.theta.copy())
        reports.append(report)
    return policy, reports


def evaluate_policy(policy: LinearPolicy, env: Environment, episodes: int = 5, seed: SeedLike = None,
                    episode_length: Optional[int] = None) -> np.ndarray:
    """Returns of `episodes` independent episodes of the current policy"""
    rng = as_generator(seed)
    starts = np.stack([env.reset(rng).x for _ in range(episodes)])
    thetas = np.repeat(policy.theta[None], episodes, axis=0)
    returns, _ = run_episodes_batch(env, lambda X, t: policy_act_batch(policy, X, thetas), starts, episode_length)
    return returns


def save_policy(policy: LinearPolicy, path: Union[str, Path]) -> None:
    data = {
        "format": "linear-policy/1",
        "theta": policy.theta.tolist(),
        "mean": policy.mean.tolist(),
        "var": policy.var.tolist(),
        "count": policy.count,
        "normalize": policy.normalize,
        "action_low": None if policy.action_low is None else policy.action_low.tolist(),
        "action_high": None if policy.action_high is None else policy.action_high.tolist(),
    }
    Path(path).write_text(json.dumps(data, indent=2), encoding="utf-8")


def load_policy(path: Union[str, Path]) -> LinearPolicy:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != "linear-policy/1":
        raise ConfigError(f"{path} is not a linear policy checkpoint")
    return LinearPolicy(data["theta"], data["mean"], data["var"], data["count"], data["normalize"],
                        data["action_low"], data["action_high"])

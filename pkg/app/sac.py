"""
Soft actor-critic with a value network, twin critics and target networks,
trained with exact hand-derived gradients through the numpy MLPs.

Losses for a batch (x, u, r, x', d) of size B, with u~ = squashed sample
from the actor at x:

    J_Q  = mean 1/2 (Q_i(x, u) - (r + gamma (1 - d) Vbar(x')))^2
    J_V  = mean 1/2 (V(x) - (min_i Q_i(x, u~) - alpha log pi(u~|x)))^2
    J_pi = mean (alpha log pi(u~|x) - min_i Q_i(x, u~))

The actor emits (mean, log_std); u = mid + half * tanh(mean + std * eps).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .config import SacConfig
from .errors import ConfigError, NonFiniteError, ShapeError
from .nn import (AdamState, Mlp, MlpGradients, adam_step, apply_adam, init_mlp, mlp_backward,
                 mlp_forward, mlp_from_bytes, mlp_gradients, mlp_to_bytes, polyak_update)
from .replay import TransitionBatch
from .seeding import SeedLike, as_generator, derive_seed

logger = logging.getLogger(__name__)

SQUASH_EPS = 1e-6
LOG_2PI = float(np.log(2.0 * np.pi))

LIVE_NETS = ("actor", "critic1", "critic2", "value")
TARGET_PAIRS = (("target_value", "value"), ("target_critic1", "critic1"), ("target_critic2", "critic2"))

# q_fn(x, u) -> (q (B,), dq/du (B, m))
QFunction = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass
class SacAgent:
    actor: Mlp
    critic1: Mlp
    critic2: Mlp
    value: Mlp
    target_value: Mlp
    target_critic1: Mlp
    target_critic2: Mlp
    action_low: np.ndarray
    action_high: np.ndarray
    config: SacConfig = field(default_factory=SacConfig)
    log_alpha: float = 0.0
    optimizers: Dict[str, AdamState] = field(default_factory=dict)
    updates: int = 0

    @property
    def state_dim(self) -> int:
        return self.value.input_dim

    @property
    def action_dim(self) -> int:
        return self.action_low.size

    @property
    def entropy_weight(self) -> float:
        return float(np.exp(self.log_alpha))

    @property
    def action_mid(self) -> np.ndarray:
        return 0.5 * (self.action_high + self.action_low)

    @property
    def action_half(self) -> np.ndarray:
        return 0.5 * (self.action_high - self.action_low)

    @property
    def target_entropy(self) -> float:
        if self.config.target_entropy is not None:
            return self.config.target_entropy
        return -float(self.action_dim)


@dataclass
class SacLossReport:
    value: float
    critic1: float
    critic2: float
    actor: float
    entropy_weight: float

    def as_dict(self) -> Dict[str, float]:
        return {"J_V": self.value, "J_Q1": self.critic1, "J_Q2": self.critic2,
                "J_pi": self.actor, "alpha": self.entropy_weight}


def create_agent(state_dim: int, action_dim: int, action_low, action_high,
                 config: Optional[SacConfig] = None, seed: int = 0) -> SacAgent:
    """Fresh agent; the value net starts with a zero output layer so V = 0"""
    config = config or SacConfig()
    hidden = list(config.hidden_sizes)
    actor = init_mlp([state_dim] + hidden + [2 * action_dim], seed=derive_seed(seed, "sac/actor"))
    critic1 = init_mlp([state_dim + action_dim] + hidden + [1], seed=derive_seed(seed, "sac/critic1"))
    critic2 = init_mlp([state_dim + action_dim] + hidden + [1], seed=derive_seed(seed, "sac/critic2"))
    value = init_mlp([state_dim] + hidden + [1], seed=derive_seed(seed, "sac/value"), zero_output_layer=True)
    agent = SacAgent(
        actor=actor,
        critic1=critic1,
        critic2=critic2,
        value=value,
        target_value=value.copy(),
        target_critic1=critic1.copy(),
        target_critic2=critic2.copy(),
        action_low=np.asarray(action_low, dtype=np.float64),
        action_high=np.asarray(action_high, dtype=np.float64),
        config=config,
        log_alpha=float(np.log(config.entropy_weight)),
    )
    if agent.action_low.shape != (action_dim,) or agent.action_high.shape != (action_dim,):
        raise ShapeError("action bounds", (action_dim,), agent.action_low.shape)
    agent.optimizers = {
        name: AdamState.zeros_like(getattr(agent, name).parameters(), config.learning_rate)
        for name in LIVE_NETS
    }
    agent.optimizers["log_alpha"] = AdamState.zeros_like([np.zeros(1)], config.learning_rate)
    return agent


def _as_rows(x: np.ndarray, width: int, what: str) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    if rows.ndim != 2 or rows.shape[1] != width:
        raise ShapeError(what, (width,), x.shape)
    return rows, single


def actor_distribution(agent: SacAgent, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mean, clamped log_std, unclamped log_std) for a batch of states"""
    out = mlp_forward(agent.actor, x)
    m = agent.action_dim
    raw = out[:, m:]
    return out[:, :m], np.clip(raw, agent.config.log_std_min, agent.config.log_std_max), raw


def _squash(agent: SacAgent, mean: np.ndarray, log_std: np.ndarray, eps: np.ndarray):
    std = np.exp(log_std)
    z = mean + std * eps
    y = np.tanh(z)
    u = agent.action_mid + agent.action_half * y
    log_prob = np.sum(
        -0.5 * eps ** 2 - log_std - 0.5 * LOG_2PI - np.log(1.0 - y ** 2 + SQUASH_EPS) - np.log(agent.action_half),
        axis=1,
    )
    return u, log_prob, y, std


def actor_sample(agent: SacAgent, x: np.ndarray, seed: SeedLike = None,
                 eps: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Squashed-Gaussian action and its log density (with the tanh correction)"""
    rows, single = _as_rows(x, agent.state_dim, "actor input")
    if eps is None:
        eps = as_generator(seed).standard_normal((rows.shape[0], agent.action_dim))
    mean, log_std, _ = actor_distribution(agent, rows)
    u, log_prob, _, _ = _squash(agent, mean, log_std, eps)
    return (u[0], float(log_prob[0])) if single else (u, log_prob)


def act_deterministic(agent: SacAgent, x: np.ndarray) -> np.ndarray:
    """Actor mean pushed through the squash; used for evaluation and policy shifts"""
    rows, single = _as_rows(x, agent.state_dim, "actor input")
    mean, _, _ = actor_distribution(agent, rows)
    u = agent.action_mid + agent.action_half * np.tanh(mean)
    return u[0] if single else u


def value_of(agent: SacAgent, x: np.ndarray):
    """V(x) for one state (float) or a batch (array)"""
    rows, single = _as_rows(x, agent.state_dim, "value input")
    v = mlp_forward(agent.value, rows)[:, 0]
    return float(v[0]) if single else v


def _critic_input_grad(net: Mlp, x: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    xu = np.concatenate([x, u], axis=1)
    q = mlp_forward(net, xu)[:, 0]
    _, grad_in = mlp_backward(net, xu, np.ones((x.shape[0], 1)))
    return q, grad_in[:, x.shape[1]:]


def twin_min_q(agent: SacAgent) -> QFunction:
    """Elementwise min of the live critics and the gradient of the chosen one"""
    def q_fn(x, u):
        q1, dq1 = _critic_input_grad(agent.critic1, x, u)
        q2, dq2 = _critic_input_grad(agent.critic2, x, u)
        pick_first = (q1 <= q2)[:, None]
        return np.minimum(q1, q2), np.where(pick_first, dq1, dq2)
    return q_fn


def critic_losses(agent: SacAgent, batch: TransitionBatch) -> Tuple[List[float], List[MlpGradients]]:
    n = len(batch)
    v_next = mlp_forward(agent.target_value, batch.x_next)[:, 0]
    target = batch.r + agent.config.gamma * (1.0 - batch.done.astype(np.float64)) * v_next
    xu = np.concatenate([batch.x, batch.u], axis=1)
    losses, grads = [], []
    for net in (agent.critic1, agent.critic2):
        err = mlp_forward(net, xu)[:, 0] - target
        losses.append(float(0.5 * np.mean(err ** 2)))
        grads.append(mlp_gradients(net, xu, (err / n)[:, None]))
    return losses, grads


def value_loss(agent: SacAgent, x: np.ndarray, eps: np.ndarray) -> Tuple[float, MlpGradients]:
    n = x.shape[0]
    u, log_prob = actor_sample(agent, x, eps=eps)
    xu = np.concatenate([x, u], axis=1)
    q = np.minimum(mlp_forward(agent.critic1, xu)[:, 0], mlp_forward(agent.critic2, xu)[:, 0])
    target = q - agent.entropy_weight * log_prob
    err = mlp_forward(agent.value, x)[:, 0] - target
    return float(0.5 * np.mean(err ** 2)), mlp_gradients(agent.value, x, (err / n)[:, None])


def actor_loss(agent: SacAgent, x: np.ndarray, eps: np.ndarray,
               q_fn: Optional[QFunction] = None) -> Tuple[float, MlpGradients, np.ndarray]:
    """Reparameterized actor loss, its gradient, and the batch log-probabilities"""
    n = x.shape[0]
    alpha = agent.entropy_weight
    q_fn = q_fn or twin_min_q(agent)
    mean, log_std, raw = actor_distribution(agent, x)
    u, log_prob, y, std = _squash(agent, mean, log_std, eps)
    q, dq_du = q_fn(x, u)
    loss = float(np.mean(alpha * log_prob - q))

    one_minus_y2 = 1.0 - y ** 2
    dlogp_dz = 2.0 * y * one_minus_y2 / (one_minus_y2 + SQUASH_EPS)
    grad_z = alpha * dlogp_dz - dq_du * agent.action_half * one_minus_y2
    grad_mean = grad_z / n
    grad_log_std = (-alpha + grad_z * std * eps) / n
    inside = (raw > agent.config.log_std_min) & (raw < agent.config.log_std_max)
    upstream = np.concatenate([grad_mean, grad_log_std * inside], axis=1)
    return loss, mlp_gradients(agent.actor, x, upstream), log_prob


def _check_finite(name: str, value: float) -> None:
    if not np.isfinite(value):
        raise NonFiniteError("non-finite loss", context=name)


def sac_update(agent: SacAgent, batch: TransitionBatch, seed: SeedLike = None) -> SacLossReport:
    """
    One Adam step on value, both critics and the actor (and the entropy
    weight when auto-tuned). All gradients use the pre-update parameters.
    Targets are left alone; see target_update.
    """
    if len(batch) == 0:
        raise ShapeError("sac batch", (1,), (0,))
    rng = as_generator(seed)
    eps = rng.standard_normal((len(batch), agent.action_dim))

    (j_q1, j_q2), (g_q1, g_q2) = critic_losses(agent, batch)
    j_v, g_v = value_loss(agent, batch.x, eps)
    j_pi, g_pi, log_prob = actor_loss(agent, batch.x, eps)
    for name, value in (("critic1", j_q1), ("critic2", j_q2), ("value", j_v), ("actor", j_pi)):
        _check_finite(name, value)

    for name, grads in (("critic1", g_q1), ("critic2", g_q2), ("value", g_v), ("actor", g_pi)):
        agent.optimizers[name] = apply_adam(getattr(agent, name), grads, agent.optimizers[name])

    if agent.config.auto_entropy:
        grad_log_alpha = -np.mean(log_prob + agent.target_entropy)
        params, agent.optimizers["log_alpha"] = adam_step(
            [np.array([agent.log_alpha])], [np.array([grad_log_alpha])], agent.optimizers["log_alpha"]
        )
        agent.log_alpha = float(params[0][0])
        _check_finite("entropy weight", agent.log_alpha)

    agent.updates += 1
    return SacLossReport(j_v, j_q1, j_q2, j_pi, agent.entropy_weight)


def target_update(agent: SacAgent, tau: Optional[float] = None) -> None:
    """target <- tau * live + (1 - tau) * target for every target network"""
    tau = agent.config.tau if tau is None else tau
    if not 0.0 < tau <= 1.0:
        raise ConfigError("tau must lie in (0, 1]")
    for target_name, live_name in TARGET_PAIRS:
        polyak_update(getattr(agent, target_name), getattr(agent, live_name), tau)


def save_agent(agent: SacAgent, path: Union[str, Path]) -> None:
    """All seven networks, optimizer moments, bounds and entropy weight in one .npz"""
    arrays: Dict[str, np.ndarray] = {
        "action_low": agent.action_low,
        "action_high": agent.action_high,
        "log_alpha": np.array(agent.log_alpha),
        "updates": np.array(agent.updates),
    }
    for name in LIVE_NETS + tuple(t for t, _ in TARGET_PAIRS):
        arrays[f"net_{name}"] = np.frombuffer(mlp_to_bytes(getattr(agent, name)), dtype=np.uint8)
    for name, state in agent.optimizers.items():
        arrays[f"adam_{name}_step"] = np.array(state.step_count)
        for i, (m, v) in enumerate(zip(state.first_moment, state.second_moment)):
            arrays[f"adam_{name}_m{i}"] = m
            arrays[f"adam_{name}_v{i}"] = v
    np.savez(path, **arrays)


def load_agent(path: Union[str, Path], config: Optional[SacConfig] = None) -> SacAgent:
    config = config or SacConfig()
    with np.load(path, allow_pickle=False) as data:
        nets = {name: mlp_from_bytes(data[f"net_{name}"].tobytes())
                for name in LIVE_NETS + tuple(t for t, _ in TARGET_PAIRS)}
        agent = SacAgent(action_low=data["action_low"], action_high=data["action_high"], config=config,
                         log_alpha=float(data["log_alpha"]), updates=int(data["updates"]), **nets)
        for name in LIVE_NETS + ("log_alpha",):
            params = [np.zeros(1)] if name == "log_alpha" else getattr(agent, name).parameters()
            state = AdamState.zeros_like(params, config.learning_rate)
            if f"adam_{name}_step" in data:
                state.step_count = int(data[f"adam_{name}_step"])
                state.first_moment = [data[f"adam_{name}_m{i}"] for i in range(len(params))]
                state.second_moment = [data[f"adam_{name}_v{i}"] for i in range(len(params))]
            agent.optimizers[name] = state
    return agent

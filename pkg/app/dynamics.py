"""
Learned dynamics: an ensemble of K delta-predicting MLPs trained on D_ENV
with bootstrap resampling and a per-member holdout, plus the batch
dynamics adapters the planner consumes.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .config import ModelConfig
from .envs import Environment
from .errors import ConfigError, InsufficientDataError, NonFiniteError, ShapeError
from .nn import AdamState, Mlp, apply_adam, init_mlp, mlp_backward, mlp_forward, mlp_from_bytes, mlp_to_bytes
from .replay import ReplayBuffer
from .seeding import SeedLike, as_generator, derive_seed

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-6


@dataclass
class Normalizer:
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if self.mean.shape != self.scale.shape:
            raise ShapeError("normalizer scale", self.mean.shape, self.scale.shape)
        if np.any(self.scale <= 0.0):
            raise ConfigError("normalizer scales must be strictly positive")

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, data: np.ndarray, floor: float = SCALE_FLOOR) -> "Normalizer":
        data = np.asarray(data, dtype=np.float64)
        return cls(data.mean(axis=0), np.maximum(data.std(axis=0), floor))

    def normalize(self, v: np.ndarray) -> np.ndarray:
        return (v - self.mean) / self.scale

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self.scale + self.mean


@dataclass
class EnsembleModel:
    members: List[Mlp]
    input_norm: Normalizer
    output_norm: Normalizer
    val_losses: np.ndarray
    state_dim: int
    action_dim: int
    optimizer_states: List[AdamState] = field(default_factory=list)
    # per member, bootstrap-set loss after every training epoch
    train_history: List[List[float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ConfigError("an ensemble needs at least one member")
        self.val_losses = np.asarray(self.val_losses, dtype=np.float64)
        if self.val_losses.shape != (len(self.members),):
            raise ShapeError("val_losses", (len(self.members),), self.val_losses.shape)
        if not self.train_history:
            self.train_history = [[] for _ in self.members]

    @property
    def size(self) -> int:
        return len(self.members)

    @classmethod
    def create(cls, state_dim: int, action_dim: int, config: Optional[ModelConfig] = None,
               seed: int = 0) -> "EnsembleModel":
        config = config or ModelConfig()
        sizes = [state_dim + action_dim] + list(config.hidden_sizes) + [state_dim]
        members = [
            init_mlp(sizes, config.activation, seed=derive_seed(seed, f"ensemble/member{k}"))
            for k in range(config.members)
        ]
        return cls(
            members=members,
            input_norm=Normalizer.identity(state_dim + action_dim),
            output_norm=Normalizer.identity(state_dim),
            val_losses=np.full(config.members, np.inf),
            state_dim=state_dim,
            action_dim=action_dim,
            optimizer_states=[AdamState.zeros_like(m.parameters(), config.learning_rate) for m in members],
        )


def _normalized_mse(net: Mlp, inputs: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean((mlp_forward(net, inputs) - targets) ** 2))


def train_ensemble(model: EnsembleModel, d_env: ReplayBuffer, epochs: int,
                   seed: SeedLike = None, config: Optional[ModelConfig] = None) -> EnsembleModel:
    """
    Fit every member on its own bootstrap resample of D_ENV against the
    squared error of normalized state deltas. A holdout slice per member
    (never part of its bootstrap) scores val_losses.
    """
    config = config or ModelConfig()
    if d_env.size < config.min_transitions:
        raise InsufficientDataError(
            f"ensemble training needs {config.min_transitions} transitions, buffer has {d_env.size}"
        )
    data = d_env.items()
    inputs = np.concatenate([data.x, data.u], axis=1)
    deltas = data.x_next - data.x
    # a zero-epoch call only scores the current nets, so the fitted scaling stays too
    if epochs > 0:
        model.input_norm = Normalizer.fit(inputs)
        model.output_norm = Normalizer.fit(deltas)
    xn = model.input_norm.normalize(inputs)
    yn = model.output_norm.normalize(deltas)

    rng = as_generator(seed)
    n = d_env.size
    n_holdout = max(1, int(round(config.holdout_fraction * n)))
    if len(model.optimizer_states) != model.size:
        model.optimizer_states = [AdamState.zeros_like(m.parameters(), config.learning_rate) for m in model.members]

    for k, net in enumerate(model.members):
        order = rng.permutation(n)
        holdout, train_pool = order[:n_holdout], order[n_holdout:]
        bootstrap = rng.choice(train_pool, size=train_pool.size, replace=True)
        state = model.optimizer_states[k]
        for epoch in range(epochs):
            shuffled = rng.permutation(bootstrap)
            for start in range(0, shuffled.size, config.batch_size):
                rows = shuffled[start:start + config.batch_size]
                pred = mlp_forward(net, xn[rows])
                err = pred - yn[rows]
                upstream = 2.0 * err / err.size
                try:
                    grads, _ = mlp_backward(net, xn[rows], upstream)
                except NonFiniteError as e:
                    raise NonFiniteError("ensemble training diverged", context=f"member {k}") from e
                state = apply_adam(net, grads, state)
            loss = _normalized_mse(net, xn[bootstrap], yn[bootstrap])
            if not np.isfinite(loss):
                raise NonFiniteError("non-finite training loss", context=f"member {k}")
            model.train_history[k].append(loss)
        model.optimizer_states[k] = state
        model.val_losses[k] = _normalized_mse(net, xn[holdout], yn[holdout])

    logger.info(f"Trained ensemble of {model.size} on {n} transitions, "
                f"val losses {np.array2string(model.val_losses, precision=5)}")
    return model


def select_members(model: EnsembleModel, count: int) -> List[int]:
    """Indices of the `count` lowest validation losses, ordered by (loss, index)"""
    if not 1 <= count <= model.size:
        raise ConfigError(f"cannot select {count} of {model.size} members")
    order = np.lexsort((np.arange(model.size), model.val_losses))
    return [int(i) for i in order[:count]]


def _member_step(model: EnsembleModel, member: int, X: np.ndarray, U: np.ndarray) -> np.ndarray:
    z = model.input_norm.normalize(np.concatenate([X, U], axis=1))
    return X + model.output_norm.denormalize(mlp_forward(model.members[member], z))


def predict(model: EnsembleModel, members: Sequence[int], x, u, seed: SeedLike = None) -> np.ndarray:
    """Next state from one uniformly chosen member of `members`"""
    if len(members) == 0:
        raise ConfigError("predict needs a non-empty member set")
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if x.shape != (model.state_dim,) or u.shape != (model.action_dim,):
        raise ShapeError("predict input", (model.state_dim, model.action_dim), (x.size, u.size))
    rng = as_generator(seed)
    member = members[int(rng.integers(len(members)))]
    x_next = _member_step(model, member, x[None, :], u[None, :])[0]
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteError("non-finite prediction", context=f"member {member}")
    return x_next


class EnsembleDynamics:
    """
    Batch dynamics backed by selected ensemble members. Every row of every
    call draws its own member, like an independent `predict` call.
    """

    def __init__(self, model: EnsembleModel, members: Sequence[int]):
        if len(members) == 0:
            raise ConfigError("ensemble dynamics need a non-empty member set")
        self.model = model
        self.members = list(members)

    def __call__(self, X: np.ndarray, U: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        choice = rng.integers(len(self.members), size=X.shape[0])
        out = np.empty_like(X)
        for j, member in enumerate(self.members):
            rows = choice == j
            if np.any(rows):
                out[rows] = _member_step(self.model, member, X[rows], U[rows])
        return out


class AnalyticDynamics:
    """Batch dynamics from an environment's equations of motion"""

    def __init__(self, env: Environment):
        self.env = env

    def __call__(self, X: np.ndarray, U: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return self.env.step_batch(X, U)


def save_ensemble(model: EnsembleModel, path: Union[str, Path]) -> None:
    arrays = {
        f"member{k}": np.frombuffer(mlp_to_bytes(net), dtype=np.uint8)
        for k, net in enumerate(model.members)
    }
    np.savez(
        path,
        members=model.size,
        state_dim=model.state_dim,
        action_dim=model.action_dim,
        input_mean=model.input_norm.mean,
        input_scale=model.input_norm.scale,
        output_mean=model.output_norm.mean,
        output_scale=model.output_norm.scale,
        val_losses=model.val_losses,
        **arrays,
    )


def load_ensemble(path: Union[str, Path], config: Optional[ModelConfig] = None) -> EnsembleModel:
    config = config or ModelConfig()
    with np.load(path, allow_pickle=False) as data:
        members = [mlp_from_bytes(data[f"member{k}"].tobytes()) for k in range(int(data["members"]))]
        return EnsembleModel(
            members=members,
            input_norm=Normalizer(data["input_mean"], data["input_scale"]),
            output_norm=Normalizer(data["output_mean"], data["output_scale"]),
            val_losses=data["val_losses"],
            state_dim=int(data["state_dim"]),
            action_dim=int(data["action_dim"]),
            optimizer_states=[AdamState.zeros_like(m.parameters(), config.learning_rate) for m in members],
        )

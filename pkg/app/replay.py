"""
Ring replay buffers for true-environment and model-generated transitions,
with uniform and union sampling.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .envs import Transition
from .errors import ConfigError, EmptyBufferError, NonFiniteError, ShapeError
from .seeding import SeedLike, as_generator

logger = logging.getLogger(__name__)

ENV_BUFFER_CAPACITY = 1_000_000
MPC_BUFFER_CAPACITY = 400_000

_INITIAL_ROWS = 1024


@dataclass
class TransitionBatch:
    x: np.ndarray
    u: np.ndarray
    r: np.ndarray
    x_next: np.ndarray
    done: np.ndarray
    indices: Optional[np.ndarray] = None  # storage slots the rows came from
    sources: Optional[np.ndarray] = None  # 0 = first buffer, 1 = second (union sampling)

    def __len__(self) -> int:
        return int(self.r.shape[0])

    def transition(self, i: int) -> Transition:
        return Transition(self.x[i].copy(), self.u[i].copy(), float(self.r[i]),
                          self.x_next[i].copy(), bool(self.done[i]))


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is evicted first"""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, name: str = "buffer"):
        if capacity < 1:
            raise ConfigError(f"{name}: capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.name = name
        self.size = 0
        self._next = 0
        rows = min(self.capacity, _INITIAL_ROWS)
        self._x = np.zeros((rows, self.state_dim))
        self._u = np.zeros((rows, self.action_dim))
        self._r = np.zeros(rows)
        self._x_next = np.zeros((rows, self.state_dim))
        self._done = np.zeros(rows, dtype=bool)

    def __len__(self) -> int:
        return self.size

    def _grow(self, needed: int) -> None:
        rows = self._r.shape[0]
        if needed <= rows:
            return
        new_rows = min(self.capacity, max(needed, 2 * rows))
        for attr in ("_x", "_u", "_r", "_x_next", "_done"):
            old = getattr(self, attr)
            new = np.zeros((new_rows,) + old.shape[1:], dtype=old.dtype)
            new[:rows] = old
            setattr(self, attr, new)

    def push(self, transition: Transition) -> None:
        self.push_batch(
            np.asarray(transition.x)[None, :],
            np.asarray(transition.u).reshape(1, -1),
            np.array([transition.r]),
            np.asarray(transition.x_next)[None, :],
            np.array([transition.done]),
        )

    def push_batch(self, x, u, r, x_next, done) -> None:
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64).reshape(-1)
        x_next = np.asarray(x_next, dtype=np.float64)
        done = np.asarray(done, dtype=bool).reshape(-1)
        n = r.shape[0]
        for what, arr, width in (("x", x, self.state_dim), ("u", u, self.action_dim),
                                 ("x_next", x_next, self.state_dim)):
            if arr.shape != (n, width):
                raise ShapeError(f"{self.name} {what}", (n, width), arr.shape)
        if done.shape != (n,):
            raise ShapeError(f"{self.name} done", (n,), done.shape)
        if not np.all(np.isfinite(r)):
            raise NonFiniteError("non-finite reward", context=self.name)
        if self.size < self.capacity:
            self._grow(min(self.capacity, self.size + n))
        for i in range(n):
            slot = self._next
            self._x[slot] = x[i]
            self._u[slot] = u[i]
            self._r[slot] = r[i]
            self._x_next[slot] = x_next[i]
            self._done[slot] = done[i]
            self._next = (slot + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def _fifo_slots(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self._next + np.arange(self.capacity)) % self.capacity

    def gather(self, slots: np.ndarray) -> TransitionBatch:
        slots = np.asarray(slots, dtype=np.int64)
        return TransitionBatch(self._x[slots].copy(), self._u[slots].copy(), self._r[slots].copy(),
                               self._x_next[slots].copy(), self._done[slots].copy(), indices=slots)

    def items(self) -> TransitionBatch:
        """All stored transitions, oldest first"""
        return self.gather(self._fifo_slots())

    def save(self, path: Union[str, Path]) -> None:
        batch = self.items()
        np.savez(path, capacity=self.capacity, name=self.name, x=batch.x, u=batch.u,
                 r=batch.r, x_next=batch.x_next, done=batch.done)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ReplayBuffer":
        with np.load(path, allow_pickle=False) as data:
            buffer = cls(int(data["capacity"]), data["x"].shape[1], data["u"].shape[1], str(data["name"]))
            buffer.push_batch(data["x"], data["u"], data["r"], data["x_next"], data["done"])
        return buffer


def sample_uniform(buffer: ReplayBuffer, n: int, seed: SeedLike = None) -> TransitionBatch:
    """n transitions drawn i.i.d. uniformly with replacement"""
    if buffer.size == 0:
        raise EmptyBufferError(f"cannot sample from empty buffer '{buffer.name}'")
    rng = as_generator(seed)
    return buffer.gather(rng.integers(0, buffer.size, size=n))


def sample_union(b1: ReplayBuffer, b2: ReplayBuffer, n: int, ratio: float,
                 seed: SeedLike = None) -> TransitionBatch:
    """
    Each row comes from b1 with probability `ratio`, else from b2. An empty
    buffer is skipped in favour of the other one.
    """
    if (b1.state_dim, b1.action_dim) != (b2.state_dim, b2.action_dim):
        raise ShapeError(f"union of '{b1.name}' and '{b2.name}'", (b1.state_dim, b1.action_dim),
                         (b2.state_dim, b2.action_dim))
    if b1.size == 0 and b2.size == 0:
        raise EmptyBufferError(f"both '{b1.name}' and '{b2.name}' are empty")
    if b1.size == 0:
        ratio = 0.0
    elif b2.size == 0:
        ratio = 1.0
    rng = as_generator(seed)
    from_first = rng.random(n) < ratio
    n_first = int(from_first.sum())

    x = np.zeros((n, b1.state_dim))
    u = np.zeros((n, b1.action_dim))
    r = np.zeros(n)
    x_next = np.zeros((n, b1.state_dim))
    done = np.zeros(n, dtype=bool)
    indices = np.zeros(n, dtype=np.int64)
    for mask, buffer, count in ((from_first, b1, n_first), (~from_first, b2, n - n_first)):
        if count == 0:
            continue
        part = sample_uniform(buffer, count, rng)
        x[mask], u[mask], r[mask] = part.x, part.u, part.r
        x_next[mask], done[mask], indices[mask] = part.x_next, part.done, part.indices
    return TransitionBatch(x, u, r, x_next, done, indices=indices,
                           sources=np.where(from_first, 0, 1))

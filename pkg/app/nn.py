"""
Dense feed-forward networks with exact reverse-mode gradients and an Adam
optimizer, on 64-bit numpy arrays.

Weights are stored as (out, in) matrices, so a layer computes
z = x @ W.T + b. Every function accepts a single input vector or a batch of
row vectors; gradients of a batch are summed over its rows.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeError

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh")

MLP_MAGIC = b"DMLP"
MLP_FORMAT_VERSION = 1


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_slope(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


@dataclass
class Mlp:
    """Feed-forward network; weights[i] has shape (layer_sizes[i+1], layer_sizes[i])"""
    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activations: List[str] = field(default_factory=list)  # one per hidden layer
    output_activation: str = "identity"

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ConfigError(f"invalid layer sizes {self.layer_sizes}")
        n_layers = len(self.layer_sizes) - 1
        if not self.activations:
            self.activations = ["tanh"] * (n_layers - 1)
        if len(self.activations) != n_layers - 1:
            raise ConfigError(
                f"expected {n_layers - 1} hidden activations, got {len(self.activations)}"
            )
        for name in self.activations:
            if name not in HIDDEN_ACTIVATIONS:
                raise ConfigError(f"unknown hidden activation '{name}'")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unknown output activation '{self.output_activation}'")
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError("layer count", (n_layers,), (len(self.weights),))
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i in range(n_layers):
            expected = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if self.weights[i].shape != expected:
                raise ShapeError(f"weights[{i}]", expected, self.weights[i].shape)
            if self.biases[i].shape != (self.layer_sizes[i + 1],):
                raise ShapeError(f"biases[{i}]", (self.layer_sizes[i + 1],), self.biases[i].shape)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def layer_activation(self, i: int) -> str:
        return self.activations[i] if i < self.num_layers - 1 else self.output_activation

    def parameters(self) -> List[np.ndarray]:
        """Parameters in canonical order [W0, b0, W1, b1, ...]"""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        current = self.parameters()
        if len(params) != len(current):
            raise ShapeError("parameter list", (len(current),), (len(params),))
        for i, (old, new) in enumerate(zip(current, params)):
            new = np.asarray(new, dtype=np.float64)
            if new.shape != old.shape:
                raise ShapeError(f"parameter {i}", old.shape, new.shape)
        self.weights = [np.array(params[2 * i], dtype=np.float64) for i in range(self.num_layers)]
        self.biases = [np.array(params[2 * i + 1], dtype=np.float64) for i in range(self.num_layers)]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_parameters(),):
            raise ShapeError("flat parameters", (self.num_parameters(),), flat.shape)
        params, offset = [], 0
        for p in self.parameters():
            params.append(flat[offset:offset + p.size].reshape(p.shape))
            offset += p.size
        self.set_parameters(params)

    def copy(self) -> "Mlp":
        return Mlp(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            self.output_activation,
        )


@dataclass
class MlpGradients:
    """Gradient bundle shaped like the network parameters"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def as_list(self) -> List[np.ndarray]:
        grads = []
        for w, b in zip(self.weights, self.biases):
            grads.extend([w, b])
        return grads

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.as_list()])


def init_mlp(
    layer_sizes: Sequence[int],
    activation: str = "tanh",
    output_activation: str = "identity",
    seed: Union[int, np.random.Generator] = 0,
    zero_output_layer: bool = False,
) -> Mlp:
    """Xavier-uniform weights, zero biases"""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sizes = [int(s) for s in layer_sizes]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    if zero_output_layer:
        weights[-1] = np.zeros_like(weights[-1])
    return Mlp(sizes, weights, biases, [activation] * (len(sizes) - 2), output_activation)


def _as_batch(net: Mlp, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ShapeError("network input", (net.input_dim,), x.shape)
    return batch, single


def _forward_trace(net: Mlp, batch: np.ndarray, check_finite: bool = False):
    pre, post = [], [batch]
    a = batch
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = _activate(net.layer_activation(i), z)
        if check_finite and not np.all(np.isfinite(a)):
            raise NonFiniteError("non-finite activation", context=f"layer {i}")
        pre.append(z)
        post.append(a)
    return pre, post


def mlp_forward(net: Mlp, x) -> np.ndarray:
    """Network output for one input vector or a (batch, input_dim) array"""
    batch, single = _as_batch(net, x)
    out = _forward_trace(net, batch)[1][-1]
    return out[0] if single else out


def mlp_backward(net: Mlp, x, upstream) -> Tuple[MlpGradients, np.ndarray]:
    """
    Gradients of sum(upstream * output) with respect to every parameter and
    to the input. Batch rows are summed into the parameter gradients; the
    input gradient keeps the batch shape.
    """
    batch, single = _as_batch(net, x)
    g = np.asarray(upstream, dtype=np.float64)
    g = g[None, :] if g.ndim == 1 else g
    if g.shape != (batch.shape[0], net.output_dim):
        raise ShapeError("upstream gradient", (batch.shape[0], net.output_dim), g.shape)

    pre, post = _forward_trace(net, batch, check_finite=True)
    last = net.num_layers - 1
    delta = g * _activation_slope(net.output_activation, pre[last], post[last + 1])
    grad_w: List[Optional[np.ndarray]] = [None] * net.num_layers
    grad_b: List[Optional[np.ndarray]] = [None] * net.num_layers
    grad_x = None
    for i in range(last, -1, -1):
        grad_w[i] = delta.T @ post[i]
        grad_b[i] = delta.sum(axis=0)
        if not (np.all(np.isfinite(grad_w[i])) and np.all(np.isfinite(grad_b[i]))):
            raise NonFiniteError("non-finite gradient", context=f"layer {i}")
        upstream_a = delta @ net.weights[i]
        if i > 0:
            delta = upstream_a * _activation_slope(net.activations[i - 1], pre[i - 1], post[i])
        else:
            grad_x = upstream_a
    grads = MlpGradients(grad_w, grad_b)
    return grads, (grad_x[0] if single else grad_x)


def mlp_gradients(net: Mlp, x, upstream) -> MlpGradients:
    return mlp_backward(net, x, upstream)[0]


@dataclass
class AdamState:
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], learning_rate: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            [np.zeros_like(p, dtype=np.float64) for p in params],
            [np.zeros_like(p, dtype=np.float64) for p in params],
            0, learning_rate, beta1, beta2, epsilon,
        )


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> Tuple[List[np.ndarray], AdamState]:
    """One bias-corrected Adam step; returns new parameter arrays and state"""
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ShapeError("adam parameter list", (len(params),), (len(grads),))
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for i, (p, g, m, v) in enumerate(zip(params, grads, state.first_moment, state.second_moment)):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam gradient {i}", p.shape, g.shape)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t, state.learning_rate, b1, b2, state.epsilon)


def apply_adam(net: Mlp, grads: MlpGradients, state: AdamState) -> AdamState:
    """Adam step applied to a network in place"""
    params, state = adam_step(net.parameters(), grads.as_list(), state)
    net.set_parameters(params)
    return state


def polyak_update(target: Mlp, live: Mlp, tau: float) -> None:
    """target <- tau * live + (1 - tau) * target"""
    target.set_parameters([
        tau * lp + (1.0 - tau) * tp for lp, tp in zip(live.parameters(), target.parameters())
    ])


def mlp_to_bytes(net: Mlp) -> bytes:
    header = json.dumps({
        "version": MLP_FORMAT_VERSION,
        "layer_sizes": net.layer_sizes,
        "activations": net.activations,
        "output_activation": net.output_activation,
    }).encode("utf-8")
    body = net.flat_parameters().astype("<f8").tobytes()
    return MLP_MAGIC + struct.pack("<I", len(header)) + header + body


def mlp_from_bytes(data: bytes) -> Mlp:
    if data[:4] != MLP_MAGIC:
        raise ConfigError("not an MLP parameter file")
    (header_len,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + header_len].decode("utf-8"))
    if header.get("version") != MLP_FORMAT_VERSION:
        raise ConfigError(f"unsupported MLP format version {header.get('version')}")
    sizes = header["layer_sizes"]
    net = Mlp(
        sizes,
        [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
        [np.zeros(o) for o in sizes[1:]],
        header["activations"],
        header["output_activation"],
    )
    flat = np.frombuffer(data[8 + header_len:], dtype="<f8").astype(np.float64)
    net.set_flat_parameters(flat)
    return net


def save_mlp(net: Mlp, path: Union[str, Path]) -> None:
    Path(path).write_bytes(mlp_to_bytes(net))


def load_mlp(path: Union[str, Path]) -> Mlp:
    return mlp_from_bytes(Path(path).read_bytes())

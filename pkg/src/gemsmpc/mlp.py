"""Small fully connected networks with a hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "linear")


@dataclass
class MlpParams:
    """Layer weights stored as (fan_in, fan_out) so a batch is ``X @ W + b``."""

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match sizes")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i}: shapes {W.shape}, {b.shape} do not chain with {self.sizes}")
        if any(a not in ACTIVATIONS for a in self.activations):
            raise ValueError(f"unknown activation in {self.activations}")

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpParams":
        return MlpParams(self.sizes, [W.copy() for W in self.weights], [b.copy() for b in self.biases],
                         self.activations)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def set_flat(self, v: np.ndarray) -> None:
        k = 0
        for W, b in zip(self.weights, self.biases):
            W[...] = v[k:k + W.size].reshape(W.shape)
            k += W.size
            b[...] = v[k:k + b.size]
            k += b.size


def init_mlp(sizes, rng: np.random.Generator, hidden_activation: str = "relu") -> MlpParams:
    """Uniform fan-in initialization; ReLU on hidden layers, linear output layer."""
    sizes = tuple(int(s) for s in sizes)
    Ws, bs = [], []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fi)
        Ws.append(rng.uniform(-bound, bound, (fi, fo)))
        bs.append(rng.uniform(-bound, bound, fo))
    acts = (hidden_activation,) * (len(sizes) - 2) + ("linear",)
    return MlpParams(sizes, Ws, bs, acts)


def zeros_mlp(sizes) -> MlpParams:
    sizes = tuple(int(s) for s in sizes)
    return MlpParams(sizes, [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                     [np.zeros(b) for b in sizes[1:]], ("relu",) * (len(sizes) - 2) + ("linear",))


def mlp_forward(p: MlpParams, X: np.ndarray):
    """Forward pass on a batch (B, in); returns the output and the cache for backprop."""
    if X.shape[-1] != p.sizes[0]:
        raise ValueError(f"input width {X.shape[-1]} != {p.sizes[0]}")
    cache = [X]
    h = X
    for W, b, act in zip(p.weights, p.biases, p.activations):
        z = h @ W + b
        h = np.maximum(z, 0.0) if act == "relu" else z
        cache.append(z)
    return h, cache


def mlp_eval(p: MlpParams, x) -> np.ndarray:
    """Inference-only forward pass (no cache, in-place activations)."""
    h = np.asarray(x, dtype=float)
    if h.shape[-1] != p.sizes[0]:
        raise ValueError(f"input width {h.shape[-1]} != {p.sizes[0]}")
    for W, b, act in zip(p.weights, p.biases, p.activations):
        h = h @ W
        h += b
        if act == "relu":
            np.maximum(h, 0.0, out=h)
    return h


def mlp_backward(p: MlpParams, cache, dout: np.ndarray):
    """Reverse pass. Returns ``(dWs, dbs, dX)`` for upstream gradient ``dout`` (B, out)."""
    dWs = [None] * len(p.weights)
    dbs = [None] * len(p.weights)
    g = dout
    for i in range(len(p.weights) - 1, -1, -1):
        z = cache[i + 1]
        if p.activations[i] == "relu":
            g = g * (z > 0)
        h_in = cache[0] if i == 0 else _act(cache[i], p.activations[i - 1])
        dWs[i] = h_in.T @ g
        dbs[i] = g.sum(axis=0)
        g = g @ p.weights[i].T
    return dWs, dbs, g


def _act(z, act):
    return np.maximum(z, 0.0) if act == "relu" else z


def flat_grads(dWs, dbs) -> np.ndarray:
    return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in zip(dWs, dbs)])


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float | None = None) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        return theta - (self.lr if lr is None else lr) * mh / (np.sqrt(vh) + self.eps)

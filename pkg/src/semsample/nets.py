"""Minimal feedforward networks with hand-written backprop and Adam.

Small fully-connected nets with rectifier hidden units are all the sampling
agent needs; keeping forward, backward and the optimizer in plain numpy makes
training bit-reproducible and lets the analytic gradients be verified against
finite differences directly.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

__all__ = ["Mlp", "Adam", "relu"]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


class Mlp:
    """Fully-connected net: linear layers with ReLU between, linear output.

    Weights use symmetric uniform fan-in initialization, U(-s, s) with
    s = 1/sqrt(fan_in), for both weights and biases.
    """

    def __init__(self, dims: Sequence[int], rng: np.random.Generator, dtype=np.float32):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        self.dims = tuple(int(d) for d in dims)
        self.dtype = np.dtype(dtype)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(
                rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(self.dtype)
            )
            self.biases.append(
                rng.uniform(-bound, bound, size=fan_out).astype(self.dtype)
            )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass keeping post-activation values for backprop."""
        a = np.asarray(x, dtype=self.dtype)
        if a.ndim == 1:
            a = a[None, :]
        cache = [a]
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i != last:
                a = relu(a)
            cache.append(a)
        return a, cache

    def backward(
        self, cache: list[np.ndarray], grad_out: np.ndarray
    ) -> list[tuple[np.ndarray, np.ndarray]]:
        """Gradients of a scalar loss w.r.t. all weights and biases, given
        the loss gradient at the output.  Returns [(dW, db), ...] per layer."""
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * self.n_layers  # type: ignore[list-item]
        delta = np.asarray(grad_out, dtype=self.dtype)
        if delta.ndim == 1:
            delta = delta[None, :]
        for i in range(self.n_layers - 1, -1, -1):
            a_in = cache[i]
            grads[i] = (a_in.T @ delta, delta.sum(axis=0))
            if i > 0:
                delta = delta @ self.weights[i].T
                delta = delta * (cache[i] > 0)  # ReLU mask of the input activation
        return grads

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        clone = object.__new__(Mlp)
        clone.dims = self.dims
        clone.dtype = self.dtype
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def to_arrays(self) -> dict:
        return {
            "dims": list(self.dims),
            "dtype": self.dtype.name,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_arrays(cls, doc: dict) -> "Mlp":
        net = object.__new__(cls)
        net.dims = tuple(int(d) for d in doc["dims"])
        net.dtype = np.dtype(doc["dtype"])
        net.weights = [np.array(w, dtype=net.dtype) for w in doc["weights"]]
        net.biases = [np.array(b, dtype=net.dtype) for b in doc["biases"]]
        for i, (fan_in, fan_out) in enumerate(zip(net.dims[:-1], net.dims[1:])):
            if net.weights[i].shape != (fan_in, fan_out) or net.biases[i].shape != (fan_out,):
                raise ValueError("snapshot layer shapes inconsistent with dims")
        return net


class Adam:
    """Adam over a flat list of parameter arrays, updating in place."""

    def __init__(self, params: Sequence[np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def state_arrays(self) -> dict:
        return {
            "t": self.t,
            "m": [a.tolist() for a in self.m],
            "v": [a.tolist() for a in self.v],
        }

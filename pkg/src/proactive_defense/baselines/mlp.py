"""One-hidden-layer tanh MLP over a flat parameter vector, with analytic gradients."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

HIDDEN = 256
FORMAT_VERSION = 1


class ShapeError(ValueError):
    pass


def param_count(n_in: int, n_out: int, hidden: int = HIDDEN) -> int:
    return n_in * hidden + hidden + hidden * n_out + n_out


@dataclass
class Cache:
    x: np.ndarray
    h: np.ndarray


class MLP:
    """y = W2ᵀ tanh(W1ᵀ x + b1) + b2, parameters packed as [W1, b1, W2, b2]."""

    def __init__(self, n_in: int, n_out: int, hidden: int = HIDDEN, seed: int = 0,
                 params: np.ndarray | None = None, out_scale: float = 1.0):
        self.n_in, self.n_out, self.hidden = n_in, n_out, hidden
        size = param_count(n_in, n_out, hidden)
        if params is None:
            rng = np.random.default_rng(seed)
            params = np.zeros(size)
            w1, _, w2, _ = self._split(params)
            w1[...] = rng.normal(0.0, 1.0 / np.sqrt(n_in), w1.shape)
            w2[...] = rng.normal(0.0, out_scale / np.sqrt(hidden), w2.shape)
        params = np.asarray(params, dtype=float)
        if params.shape != (size,):
            raise ShapeError(f"expected {size} parameters, got {params.shape}")
        self.params = params

    def _split(self, flat: np.ndarray):
        i, h, o = self.n_in, self.hidden, self.n_out
        a = i * h
        b = a + h
        c = b + h * o
        return flat[:a].reshape(i, h), flat[a:b], flat[b:c].reshape(h, o), flat[c:]

    @property
    def size(self) -> int:
        return self.params.size

    def copy(self) -> "MLP":
        return MLP(self.n_in, self.n_out, self.hidden, params=self.params.copy())

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Cache]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        if xb.ndim != 2 or xb.shape[1] != self.n_in:
            raise ShapeError(f"input shape {x.shape} does not match n_in={self.n_in}")
        w1, b1, w2, b2 = self._split(self.params)
        h = np.tanh(xb @ w1 + b1)
        y = h @ w2 + b2
        return (y[0] if single else y), Cache(xb, h)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: Cache, grad_out: np.ndarray) -> np.ndarray:
        """Flat gradient of a scalar loss given dL/dy (batch rows summed)."""
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != (cache.h.shape[0], self.n_out):
            raise ShapeError(f"grad shape {grad_out.shape} does not match output ({cache.h.shape[0]}, {self.n_out})")
        _, _, w2, _ = self._split(self.params)
        grad = np.empty_like(self.params)
        gw1, gb1, gw2, gb2 = self._split(grad)
        gw2[...] = cache.h.T @ g
        gb2[...] = g.sum(axis=0)
        dh = (g @ w2.T) * (1.0 - cache.h ** 2)
        gw1[...] = cache.x.T @ dh
        gb1[...] = dh.sum(axis=0)
        return grad

    def save(self, path: Union[str, os.PathLike]) -> None:
        Path(path).write_text(json.dumps({
            "format": "mlp-tanh", "version": FORMAT_VERSION, "n_in": self.n_in, "hidden": self.hidden,
            "n_out": self.n_out, "params": self.params.tolist()}), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "MLP":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        if d.get("format") != "mlp-tanh" or d.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported parameter file")
        return cls(d["n_in"], d["n_out"], d["hidden"], params=np.array(d["params"]))


class Adam:
    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

"""Small neural building blocks: Glorot-initialized linear layers, a gated
recurrent cell, and inverted dropout."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def glorot(rng: np.random.Generator, shape: tuple[int, ...],
           fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear:
    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int, name: str):
        self.w = Tensor(glorot(rng, (in_dim, out_dim), in_dim, out_dim),
                        requires_grad=True, name=f"{name}.w")
        self.b = Tensor(np.zeros(out_dim), requires_grad=True, name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            return T.add_bias(x @ self.w, self.b)
        return x @ self.w + self.b

    def params(self) -> list[Tensor]:
        return [self.w, self.b]


class GRUCell:
    """Gated recurrent unit; gate layout [reset | update | candidate]."""

    def __init__(self, rng: np.random.Generator, in_dim: int, hidden: int, name: str):
        self.hidden = hidden
        self.wx = Tensor(glorot(rng, (in_dim, 3 * hidden), in_dim, hidden),
                         requires_grad=True, name=f"{name}.wx")
        self.wh = Tensor(glorot(rng, (hidden, 3 * hidden), hidden, hidden),
                         requires_grad=True, name=f"{name}.wh")
        self.b = Tensor(np.zeros(3 * hidden), requires_grad=True, name=f"{name}.b")

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        hid = self.hidden
        px = T.add_bias(x @ self.wx, self.b)
        ph = h @ self.wh
        r = T.sigmoid(T.slice_last(px, 0, hid) + T.slice_last(ph, 0, hid))
        u = T.sigmoid(T.slice_last(px, hid, 2 * hid) + T.slice_last(ph, hid, 2 * hid))
        c = T.tanh(T.slice_last(px, 2 * hid, 3 * hid) + r * T.slice_last(ph, 2 * hid, 3 * hid))
        return u * h + (1.0 - u) * c

    def initial_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden)))

    def params(self) -> list[Tensor]:
        return [self.wx, self.wh, self.b]


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * Tensor(mask)

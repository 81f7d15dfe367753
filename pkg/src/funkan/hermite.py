"""Orthonormal Hermite functions evaluated on (possibly deformed) grids.

The basis consists of psi_k(x) = c_k * H_k(x) * exp(-x^2/2) with
physicists' Hermite polynomials H_k and normalization
c_k = (2^k k! sqrt(pi))^(-1/2). Evaluation uses the recurrence in
normalized form,

    psi_{k+1} = x * sqrt(2/(k+1)) * psi_k - sqrt(k/(k+1)) * psi_{k-1},

which stays bounded for any order. Derivatives use the ladder identity
psi_k'(x) = sqrt(k/2) psi_{k-1}(x) - sqrt((k+1)/2) psi_{k+1}(x).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, mul

_PI_QUARTER = math.pi**-0.25


def _psi_table(x: np.ndarray, kmax: int) -> np.ndarray:
    """Evaluate psi_0 .. psi_kmax at every element of x; returns [kmax+1, *x.shape]."""
    table = np.empty((kmax + 1,) + x.shape, dtype=x.dtype)
    table[0] = _PI_QUARTER * np.exp(-0.5 * x * x)
    if kmax >= 1:
        table[1] = math.sqrt(2.0) * x * table[0]
    for k in range(1, kmax):
        table[k + 1] = math.sqrt(2.0 / (k + 1)) * x * table[k] - math.sqrt(k / (k + 1)) * table[k - 1]
    return table


class HermiteBasis:
    """The first ``r`` orthonormal Hermite functions."""

    def __init__(self, r: int = 6):
        if r < 1:
            raise ShapeError(f"basis size must be >= 1, got {r}")
        self.r = r
        # log-space to stay finite for large orders
        self.norm_constants = np.array(
            [math.exp(-0.5 * (k * math.log(2.0) + math.lgamma(k + 1)) - 0.25 * math.log(math.pi))
             for k in range(r)]
        )

    def __repr__(self) -> str:
        return f"HermiteBasis(r={self.r})"

    def _check_order(self, k: int) -> None:
        if not 0 <= k < self.r:
            raise ShapeError(f"order {k} outside basis of size {self.r}")

    def eval(self, k: int, x: Tensor) -> Tensor:
        """psi_k at every element of x, differentiable w.r.t. x."""
        self._check_order(k)
        return self.eval_all(x)[k]

    def eval_all(self, x: Tensor) -> list[Tensor]:
        """All r basis functions at x, sharing one recurrence sweep."""
        table = _psi_table(x.data, self.r)  # one extra order feeds the derivatives

        def make_node(k: int) -> Tensor:
            def backward(g):
                d = -math.sqrt((k + 1) / 2.0) * table[k + 1]
                if k >= 1:
                    d = d + math.sqrt(k / 2.0) * table[k - 1]
                node._send(x, g * d)

            node = Tensor._node(table[k].copy(), (x,), backward, f"hermite{k}")
            return node

        return [make_node(k) for k in range(self.r)]

    def eval_separable_2d(self, k: int, qx: Tensor, qy: Tensor) -> Tensor:
        """Separable 2-D map psi_k(qx) * psi_k(qy), elementwise."""
        if qx.shape != qy.shape:
            raise ShapeError(f"coordinate shapes differ: {qx.shape} vs {qy.shape}")
        return mul(self.eval(k, qx), self.eval(k, qy))


def uniform_grid(h: int, w: int, extent: float = 3.0) -> tuple[Tensor, Tensor]:
    """Reference coordinates over [-extent, extent]; qx varies along width, qy along height."""
    if h < 2 or w < 2:
        raise ShapeError(f"grid needs h,w >= 2, got ({h},{w})")
    if extent <= 0:
        raise ShapeError(f"grid extent must be positive, got {extent}")
    xs = np.linspace(-extent, extent, w)
    ys = np.linspace(-extent, extent, h)
    qx = np.broadcast_to(xs[None, :], (h, w)).copy()
    qy = np.broadcast_to(ys[:, None], (h, w)).copy()
    return Tensor(qx), Tensor(qy)

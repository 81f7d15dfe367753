"""The FunKAN block: learned grid deformation, Hermite reconstruction, 1x1 mixing.

One block maps [N, n, h, w] -> [N, m, h, w] in four stages:

1. a pre-activation residual offset predictor produces per-channel
   coordinate displacements (dqx, dqy);
2. the displacements are added to a cached uniform reference grid,
   giving one deformed sampling grid per channel;
3. every basis function is evaluated on the deformed grid as a
   separable product psi_k(gx) * psi_k(gy), and the per-channel inner
   functions are their combination under the row-normalized attention
   matrix;
4. a 1x1 convolution mixes the n inner functions into m outputs.

The input influences the output only through the deformation: with the
offset predictor frozen at zero the block emits a fixed linear
combination of reference-grid basis maps.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .hermite import HermiteBasis, uniform_grid
from .nn import BatchNorm2d, Conv2d
from .tensor import (Tensor, add, assert_finite, conv2d, default_dtype, getitem, mul, relu,
                     reshape, softmax)


class OffsetPredictor:
    """Residual network emitting per-channel (dqx, dqy) displacement fields.

    shortcut:  w0 . BN(x)                      (3x3, n -> 2n, no bias)
    main:      w2 . ReLU(BN(w1 . ReLU(BN(x)))) (two 3x3 convs, n -> n -> 2n)
    """

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.bn0 = BatchNorm2d(n)
        self.bn1 = BatchNorm2d(n)
        self.bn2 = BatchNorm2d(n)
        self.w0 = Conv2d(3, 3, n, 2 * n, rng, bias=False)
        self.w1 = Conv2d(3, 3, n, n, rng, bias=True)
        self.w2 = Conv2d(3, 3, n, 2 * n, rng, bias=True)

    def __call__(self, x: Tensor, mode: str) -> tuple[Tensor, Tensor]:
        if x.ndim != 4 or x.shape[1] != self.n:
            raise ShapeError(f"offset predictor expects [N,{self.n},h,w], got {x.shape}")
        shortcut = self.w0(self.bn0(x, mode))
        t = self.w1(relu(self.bn1(x, mode)))
        t = self.w2(relu(self.bn2(t, mode)))
        dq = add(shortcut, t)
        return getitem(dq, np.s_[:, : self.n]), getitem(dq, np.s_[:, self.n :])

    def named_parameters(self, prefix: str):
        for name, part in (("bn0", self.bn0), ("bn1", self.bn1), ("bn2", self.bn2),
                           ("w0", self.w0), ("w1", self.w1), ("w2", self.w2)):
            yield from part.named_parameters(f"{prefix}.{name}")

    def named_stats(self, prefix: str):
        for name, part in (("bn0", self.bn0), ("bn1", self.bn1), ("bn2", self.bn2)):
            yield from part.named_stats(f"{prefix}.{name}")


class FunKanBlock:
    """One functional Kolmogorov-Arnold layer (n input, m output channels)."""

    def __init__(self, n: int, m: int | None = None, r: int = 6,
                 rng: np.random.Generator | None = None, extent: float = 3.0,
                 attention_norm: str = "softmax", mix_bias: bool = True):
        if attention_norm not in ("softmax", "raw"):
            raise ShapeError(f"unknown attention normalization {attention_norm!r}")
        rng = rng if rng is not None else np.random.default_rng()
        self.n = n
        self.m = m if m is not None else n
        self.basis = HermiteBasis(r)
        self.extent = extent
        self.attention_norm = attention_norm
        self.offset = OffsetPredictor(n, rng)
        # zero logits: uniform attention, no basis function privileged at start
        self.A = Tensor.zeros((n, r), requires_grad=True)
        self.theta = Conv2d(1, 1, n, self.m, rng, bias=mix_bias)
        self._grids: dict[tuple[int, int], tuple[Tensor, Tensor]] = {}

    @property
    def r(self) -> int:
        return self.basis.r

    def _grid(self, h: int, w: int) -> tuple[Tensor, Tensor]:
        key = (h, w, np.dtype(default_dtype()).str)
        if key not in self._grids:
            self._grids[key] = uniform_grid(h, w, self.extent)
        return self._grids[key]

    def predict_offsets(self, x: Tensor, mode: str = "train") -> tuple[Tensor, Tensor]:
        return self.offset(x, mode)

    def _attention_weights(self) -> Tensor:
        if self.attention_norm == "softmax":
            return softmax(self.A, axis=1)
        return self.A

    def attention(self) -> np.ndarray:
        """Normalized coefficient matrix [n, r] for introspection."""
        return self._attention_weights().data.copy()

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.n:
            raise ShapeError(f"FunKAN block expects [N,{self.n},h,w], got {x.shape}")
        _, _, h, w = x.shape
        qx, qy = self._grid(h, w)

        dqx, dqy = self.predict_offsets(x, mode)
        gx = add(dqx, qx)
        gy = add(dqy, qy)

        px = self.basis.eval_all(gx)
        py = self.basis.eval_all(gy)
        weights = self._attention_weights()

        phi: Tensor | None = None
        for k in range(self.r):
            coeff = reshape(getitem(weights, np.s_[:, k]), (1, self.n, 1, 1))
            term = mul(mul(px[k], py[k]), coeff)
            phi = term if phi is None else add(phi, term)

        out = conv2d(phi, self.theta.kernel, self.theta.bias)
        return assert_finite(out, f"FunKAN block (n={self.n}, m={self.m})")

    __call__ = forward

    def named_parameters(self, prefix: str):
        yield from self.offset.named_parameters(f"{prefix}.offset")
        yield f"{prefix}.attention_logits", self.A
        yield from self.theta.named_parameters(f"{prefix}.mix")

    def named_stats(self, prefix: str):
        yield from self.offset.named_stats(f"{prefix}.offset")

"""Thin parameter-holding layers on top of the tensor ops.

Initialization: convolution kernels draw from uniform(-s, s) with
s = sqrt(1 / (kH*kW*Cin)); biases and batch-norm shifts start at zero,
batch-norm scales at one.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import RunningStats, Tensor, batch_norm, conv2d, default_dtype


class Conv2d:
    """Convolution parameters plus the call that applies them."""

    def __init__(self, kh: int, kw: int, cin: int, cout: int, rng: np.random.Generator,
                 bias: bool = True, stride: int = 1, padding: str = "same"):
        s = math.sqrt(1.0 / (kh * kw * cin))
        self.kernel = Tensor(rng.uniform(-s, s, size=(kh, kw, cin, cout)).astype(default_dtype()),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=default_dtype()), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias, stride=self.stride, padding=self.padding)

    def named_parameters(self, prefix: str):
        yield f"{prefix}.kernel", self.kernel
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias

    def named_stats(self, prefix: str):
        return iter(())


class BatchNorm2d:
    """Learnable per-channel scale/shift with running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels, dtype=default_dtype()), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=default_dtype()), requires_grad=True)
        self.stats = RunningStats(channels, momentum=momentum, eps=eps)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.stats, mode=mode)

    def named_parameters(self, prefix: str):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_stats(self, prefix: str):
        yield prefix, self.stats

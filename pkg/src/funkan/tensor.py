"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array together with an optional graph node
(parent references plus a backward closure). Calling ``backward()`` on a
scalar loss topologically sorts the recorded graph and accumulates
gradients into every reachable tensor that has ``requires_grad`` set.

Broadcasting is supported for the cases the networks need (scalars,
per-channel parameters, reference grids); gradients of broadcast
operands are reduced back to the operand shape by summation.

Compute precision defaults to float32. Gradient checks run in float64
via :func:`using_dtype`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def default_dtype() -> np.dtype:
    return np.dtype(_DEFAULT_DTYPE)


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ShapeError(f"unsupported compute dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the default compute precision."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference / validation passes)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _reduce_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional array with an optional autodiff graph node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = ""

    # -- construction helpers --------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad=False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad)

    @staticmethod
    def ones(shape, requires_grad=False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=_DEFAULT_DTYPE), requires_grad)

    @staticmethod
    def _node(data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward = None
        out._op = op
        out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- introspection -----------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    # -- gradient machinery --------------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def _send(self, parent: "Tensor", contribution: np.ndarray) -> None:
        if parent.requires_grad:
            parent.grad = contribution if parent.grad is None else parent.grad + contribution

    def backward(self) -> None:
        """Accumulate gradients of this scalar into all reachable parameters.

        Leaf parameters must have been reset with ``zero_grad`` since the
        previous call; stale gradients are rejected rather than silently
        mixed into the new pass.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ShapeError("backward() on a tensor with no recorded graph")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        for node in order:
            if not node._parents and node.grad is not None:
                raise NumericError(
                    "stale gradient on a leaf tensor; call zero_grad() before backward()"
                )

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

        # Release interior buffers and saved forward context; parameter leaves
        # keep their accumulated gradients, the seed keeps its marker so a
        # second backward() on the same loss is rejected as stale.
        for node in order:
            if node._parents:
                node._parents = ()
                node._backward = None
                if node is not self:
                    node.grad = None


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        out._send(a, _reduce_to_shape(g, a.shape))
        out._send(b, _reduce_to_shape(g, b.shape))

    out = Tensor._node(out_data, (a, b), backward, "add")
    return out


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def backward(g):
        out._send(a, _reduce_to_shape(g, a.shape))
        out._send(b, _reduce_to_shape(-g, b.shape))

    out = Tensor._node(out_data, (a, b), backward, "sub")
    return out


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        out._send(a, _reduce_to_shape(g * b.data, a.shape))
        out._send(b, _reduce_to_shape(g * a.data, b.shape))

    out = Tensor._node(out_data, (a, b), backward, "mul")
    return out


def div(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_broadcast(a, b, "div")
    out_data = a.data / b.data

    def backward(g):
        out._send(a, _reduce_to_shape(g / b.data, a.shape))
        out._send(b, _reduce_to_shape(-g * a.data / (b.data * b.data), b.shape))

    out = Tensor._node(out_data, (a, b), backward, "div")
    return out


def neg(a: Tensor) -> Tensor:
    def backward(g):
        out._send(a, -g)

    out = Tensor._node(-a.data, (a,), backward, "neg")
    return out


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out_data = a.data**exponent

    def backward(g):
        out._send(a, g * exponent * a.data ** (exponent - 1.0))

    out = Tensor._node(out_data, (a,), backward, "pow")
    return out


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        out._send(a, g * out_data)

    out = Tensor._node(out_data, (a,), backward, "exp")
    return out


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def backward(g):
        out._send(a, g / a.data)

    out = Tensor._node(out_data, (a,), backward, "log")
    return out


def sqrt(a: Tensor) -> Tensor:
    return power(a, 0.5)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is None:
            grad = np.broadcast_to(g, a.shape)
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            expanded = g if keepdims else np.expand_dims(g, tuple(ax % a.ndim for ax in axes))
            grad = np.broadcast_to(expanded, a.shape)
        out._send(a, np.ascontiguousarray(grad))

    out = Tensor._node(np.asarray(out_data), (a,), backward, "sum")
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for ax in axes:
            count *= a.shape[ax % a.ndim]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def backward(g):
        out._send(a, g.reshape(a.shape))

    out = Tensor._node(out_data, (a,), backward, "reshape")
    return out


def getitem(a: Tensor, key) -> Tensor:
    out_data = a.data[key]

    def backward(g):
        grad = np.zeros_like(a.data)
        grad[key] += g
        out._send(a, grad)

    out = Tensor._node(out_data, (a,), backward, "getitem")
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out_data = np.where(mask, a.data, 0)

    def backward(g):
        out._send(a, g * mask)

    out = Tensor._node(out_data, (a,), backward, "relu")
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def sigmoid(a: Tensor) -> Tensor:
    out_data = _stable_sigmoid(a.data)

    def backward(g):
        out._send(a, g * out_data * (1.0 - out_data))

    out = Tensor._node(out_data, (a,), backward, "sigmoid")
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed as max(x, 0) + log1p(e^-|x|)."""
    x = a.data
    out_data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        out._send(a, g * _stable_sigmoid(x))

    out = Tensor._node(out_data, (a,), backward, "softplus")
    return out


def softmax(a: Tensor, axis: int) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        out._send(a, out_data * (g - inner))

    out = Tensor._node(out_data, (a,), backward, "softmax")
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        out._send(a, g @ b.data.T)
        out._send(b, a.data.T @ g)

    out = Tensor._node(out_data, (a, b), backward, "matmul")
    return out


def upsample_nearest2x(a: Tensor) -> Tensor:
    if a.ndim != 4:
        raise ShapeError(f"upsample_nearest2x expects [N,C,h,w], got {a.shape}")
    out_data = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        n, c, h2, w2 = g.shape
        out._send(a, g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    out = Tensor._node(out_data, (a,), backward, "upsample_nearest2x")
    return out


# -- 2-D convolution -------------------------------------------------------------


def _conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: str):
    if padding == "same":
        oh = -(-h // stride)
        ow = -(-w // stride)
        ph = max((oh - 1) * stride + kh - h, 0)
        pw = max((ow - 1) * stride + kw - w, 0)
    elif padding == "valid":
        oh = (h - kh) // stride + 1
        ow = (w - kw) // stride + 1
        ph = pw = 0
        if oh < 1 or ow < 1:
            raise ShapeError(f"valid conv: kernel ({kh},{kw}) larger than input ({h},{w})")
    else:
        raise ShapeError(f"unknown padding mode {padding!r}")
    return oh, ow, ph // 2, ph - ph // 2, pw // 2, pw - pw // 2


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of [N,Cin,h,w] with a [kH,kW,Cin,Cout] kernel."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [N,Cin,h,w] input, got {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d expects [kH,kW,Cin,Cout] kernel, got {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    n, xc, h, w = x.shape
    if xc != cin:
        raise ShapeError(f"conv2d: input has {xc} channels, kernel expects {cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got ({kh},{kw})")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    oh, ow, pt, pb, pl, pr = _conv_geometry(h, w, kh, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # column order (kh, kw, cin) matches kernel.reshape(kh*kw*cin, cout)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 4, 5, 1)).reshape(n * oh * ow, kh * kw * cin)
    wmat = kernel.data.reshape(kh * kw * cin, cout)
    out2 = cols @ wmat
    out_data = np.ascontiguousarray(out2.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))
    if bias is not None:
        out_data += bias.data.reshape(1, cout, 1, 1)

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, cout)
        if kernel.requires_grad:
            out._send(kernel, (cols.T @ g2).reshape(kh, kw, cin, cout))
        if bias is not None and bias.requires_grad:
            out._send(bias, g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(n, oh, ow, kh, kw, cin).transpose(0, 5, 1, 2, 3, 4)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + (oh - 1) * stride + 1 : stride,
                        j : j + (ow - 1) * stride + 1 : stride] += gcols[:, :, :, :, i, j]
            out._send(x, gxp[:, :, pt : pt + h, pl : pl + w])

    out = Tensor._node(out_data, parents, backward, "conv2d")
    return out


# -- batch normalization ------------------------------------------------------------


class RunningStats:
    """Per-channel running mean/variance for batch normalization."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.mean = np.zeros(channels, dtype=np.float64)
        self.var = np.ones(channels, dtype=np.float64)
        self.initialized = False

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        m = self.momentum
        if not self.initialized:
            self.mean = batch_mean.astype(np.float64)
            self.var = batch_var.astype(np.float64)
            self.initialized = True
        else:
            self.mean = (1.0 - m) * self.mean + m * batch_mean
            self.var = (1.0 - m) * self.var + m * batch_var


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: RunningStats,
               mode: str = "train") -> Tensor:
    """Normalize [N,C,h,w] per channel over the (N,h,w) axes."""
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects [N,C,h,w], got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must have shape ({c},)")
    if mode not in ("train", "eval"):
        raise ShapeError(f"batch_norm: unknown mode {mode!r}")

    if mode == "train":
        if n * h * w < 2:
            raise ShapeError("batch_norm train mode needs at least 2 values per channel")
        mu = tmean(x, axis=(0, 2, 3), keepdims=True)
        centered = sub(x, mu)
        var = tmean(mul(centered, centered), axis=(0, 2, 3), keepdims=True)
        state.update(mu.data.reshape(c).astype(np.float64),
                     var.data.reshape(c).astype(np.float64))
        inv = power(add(var, state.eps), -0.5)
        xhat = mul(centered, inv)
    else:
        if not state.initialized:
            raise NumericError("batch_norm eval mode before any train step")
        rm = state.mean.astype(x.data.dtype).reshape(1, c, 1, 1)
        scale = (1.0 / np.sqrt(state.var + state.eps)).astype(x.data.dtype).reshape(1, c, 1, 1)
        xhat = mul(sub(x, Tensor(rm, dtype=x.data.dtype)), Tensor(scale, dtype=x.data.dtype))

    g = reshape(gamma, (1, c, 1, 1))
    b = reshape(beta, (1, c, 1, 1))
    return add(mul(xhat, g), b)


# -- operator sugar ---------------------------------------------------------------

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(self, other)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: add(neg(self), other)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(self, other)
Tensor.__truediv__ = lambda self, other: div(self, other)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__pow__ = lambda self, p: power(self, p)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.__getitem__ = lambda self, key: getitem(self, key)
Tensor.sum = tsum
Tensor.mean = tmean
Tensor.reshape = lambda self, *shape: reshape(
    self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape
)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def assert_finite(t: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite activations in {where}")
    return t

"""Functional Kolmogorov-Arnold network layers and supporting toolkit."""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad, using_dtype  # noqa: F401

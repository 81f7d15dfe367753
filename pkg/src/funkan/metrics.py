"""Fidelity and overlap metrics: PSNR, total variation, IoU, F1."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def psnr(pred: np.ndarray, target: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) after clamping both images to [0, peak].

    Identical images return math.inf.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"psnr: shapes differ, {pred.shape} vs {target.shape}")
    p = np.clip(pred, 0.0, peak)
    t = np.clip(target, 0.0, peak)
    mse = float(np.mean((p - t) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def total_variation(img: np.ndarray) -> float:
    """Isotropic discrete TV: sum of sqrt(dx^2 + dy^2) over forward
    differences with replicate boundary (zero difference at the far edge)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 2:
        raise ShapeError(f"total_variation expects a 2-D image with h,w >= 2, got {img.shape}")
    dx = np.zeros_like(img)
    dy = np.zeros_like(img)
    dx[:, :-1] = img[:, 1:] - img[:, :-1]
    dy[:-1, :] = img[1:, :] - img[:-1, :]
    return float(np.sqrt(dx * dx + dy * dy).sum())


def _binarize(pred: np.ndarray, threshold: float, logits: bool) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    if logits:
        # sigmoid(x) > t  <=>  x > log(t/(1-t))
        cutoff = math.log(threshold / (1.0 - threshold))
        return pred > cutoff
    return pred > threshold


def iou(pred: np.ndarray, mask: np.ndarray, threshold: float = 0.5,
        logits: bool = True) -> float:
    """Intersection over union of the thresholded prediction and the mask.

    Both sets empty counts as perfect agreement (1.0).
    """
    p = _binarize(pred, threshold, logits)
    g = np.asarray(mask) > 0.5
    if p.shape != g.shape:
        raise ShapeError(f"iou: shapes differ, {p.shape} vs {g.shape}")
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def f1(pred: np.ndarray, mask: np.ndarray, threshold: float = 0.5,
       logits: bool = True) -> float:
    """Dice coefficient 2|P&G| / (|P|+|G|); empty-empty counts as 1.0."""
    p = _binarize(pred, threshold, logits)
    g = np.asarray(mask) > 0.5
    if p.shape != g.shape:
        raise ShapeError(f"f1: shapes differ, {p.shape} vs {g.shape}")
    denom = p.sum() + g.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(p, g).sum() / denom)


@dataclass
class MetricReport:
    """Per-image values with their mean and standard deviation."""

    name: str
    values: list[float]

    @property
    def count(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else math.nan

    @property
    def std(self) -> float:
        if len(self.values) < 2:
            return 0.0
        return float(np.std(self.values, ddof=1))

    def summary(self) -> str:
        return f"{self.name}: {self.mean:.4f} +/- {self.std:.4f} (n={self.count})"


def report(name: str, values) -> MetricReport:
    return MetricReport(name=name, values=[float(v) for v in values])

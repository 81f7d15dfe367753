"""Supervised training: losses, Adam, staged learning rate, augmentation.

The loop is a single deterministic stream: parameter initialization,
epoch shuffling, and augmentation each draw from their own child of the
config seed, so identical (config, seed) runs produce bitwise-identical
loss curves and checkpoints.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import checkpoint, dataio, metrics
from .errors import ConfigError, DataError, NumericError
from .gibbs import SamplePair
from .models import Model, ModelSpec, build
from .tensor import Tensor, add, mul, neg, no_grad, sigmoid, softplus, sub, tmean, tsum, zero_grads

# -- losses ---------------------------------------------------------------------


def loss_enhance(pred: Tensor, target: Tensor, reduction: str = "image_sum") -> Tensor:
    """Mean over the batch of per-image squared error.

    ``image_sum`` sums squared differences over each image (the default);
    ``pixel_mean`` averages them, which only rescales the gradient.
    """
    if pred.shape != target.shape:
        raise ConfigError(f"loss_enhance: shapes differ, {pred.shape} vs {target.shape}")
    if pred.ndim != 4 or pred.shape[0] == 0:
        raise ConfigError(f"loss_enhance: expected non-empty [N,C,h,w], got {pred.shape}")
    diff = sub(pred, target)
    sq = mul(diff, diff)
    per_image = tsum(sq, axis=(1, 2, 3)) if reduction == "image_sum" else tmean(sq, axis=(1, 2, 3))
    return tmean(per_image)


def loss_segment(logits: Tensor, mask: Tensor, ce_weight: float = 0.1,
                 dice_smooth: float = 1.0) -> Tensor:
    """Batch mean of ce_weight * pixel-mean BCE plus the smoothed Dice loss."""
    if logits.shape != mask.shape:
        raise ConfigError(f"loss_segment: shapes differ, {logits.shape} vs {mask.shape}")
    axes = (1, 2, 3)
    # stable BCE on logits: softplus(z) - z*g, averaged per image
    ce = tmean(sub(softplus(logits), mul(logits, mask)), axis=axes)
    p = sigmoid(logits)
    inter = tsum(mul(p, mask), axis=axes)
    total = add(tsum(p, axis=axes), tsum(mask, axis=axes))
    dice = sub(Tensor(1.0, dtype=logits.dtype),
               (inter * 2.0 + dice_smooth) / (total + dice_smooth))
    return tmean(add(mul(ce, ce_weight), dice))


# -- optimizer ---------------------------------------------------------------------


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected update, in place on param/m/v. ``t`` counts from 1."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over a named parameter table (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, named_params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data, dtype=np.float64) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data, dtype=np.float64) for k, p in self.params.items()}

    def step(self, lr: float) -> None:
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.t += 1
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            g64 = g.astype(np.float64)
            buf = p.data.astype(np.float64)
            adam_step(buf, g64, self.m[name], self.v[name], self.t, lr,
                      self.beta1, self.beta2, self.eps)
            p.data[...] = buf.astype(p.data.dtype)

    def zero_grad(self) -> None:
        zero_grads(self.params.values())


# -- schedule and augmentation ---------------------------------------------------------


def stage_lr(epoch: int, total_epochs: int, stages: list[float],
             boundaries: list[int] | None = None) -> float:
    """Learning rate for ``epoch``; stages switch at ``boundaries`` (default equal splits)."""
    if not stages or any(a <= b for a, b in zip(stages, stages[1:])):
        raise ConfigError(f"lr stages must be strictly decreasing, got {stages}")
    if boundaries is None:
        span = total_epochs / len(stages)
        boundaries = [math.ceil(span * (i + 1)) for i in range(len(stages) - 1)]
    if len(boundaries) != len(stages) - 1:
        raise ConfigError(f"need {len(stages) - 1} boundaries for {len(stages)} stages")
    for boundary, lr in zip(boundaries, stages):
        if epoch < boundary:
            return lr
    return stages[-1]


def augment(pair: SamplePair, task: str, rng: np.random.Generator,
            noise_sigma: float = 0.01, flip_prob: float = 0.5,
            enabled: bool = True) -> SamplePair:
    """Noise on the input (enhancement) or shared geometry flips (segmentation).

    Enhancement noise never touches the target. Segmentation transforms
    are applied identically to image and mask; rot90/transpose require a
    square canvas and are skipped otherwise.
    """
    if not enabled:
        return pair
    if not 0.0 <= flip_prob <= 1.0:
        raise ConfigError(f"flip probability must be in [0,1], got {flip_prob}")
    x = pair.input
    y = pair.target
    if task == "enhance":
        noise = rng.normal(0.0, noise_sigma, size=x.shape)
        x = np.clip(x + noise, 0.0, 1.0).astype(np.float32)
        return SamplePair(input=x, target=y, meta=pair.meta)
    if task != "segment":
        raise ConfigError(f"unknown task {task!r}")

    square = x.shape[0] == x.shape[1]
    if rng.random() < flip_prob:
        x, y = x[:, ::-1], y[:, ::-1]
    if rng.random() < flip_prob:
        x, y = x[::-1, :], y[::-1, :]
    if square and rng.random() < flip_prob:
        x, y = np.rot90(x), np.rot90(y)
    if square and rng.random() < flip_prob:
        x, y = x.T, y.T
    return SamplePair(input=np.ascontiguousarray(x), target=np.ascontiguousarray(y),
                      meta=pair.meta)


# -- configuration ----------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Field-for-field mirror of the YAML training config."""

    task: str = "enhance"  # enhance | segment
    split_csv: str = ""
    out_dir: str = "runs/default"
    seed: int = 0
    epochs: int = 10
    batch_size: int = 8
    lr_stages: list[float] = field(default_factory=lambda: [1e-4, 5e-5, 1e-5])
    stage_boundaries: list[int] | None = None
    augment: bool = True
    noise_sigma: float = 0.01
    flip_prob: float = 0.5
    loss_reduction: str = "image_sum"
    checkpoint_every: int = 1
    channels: tuple[int, int, int] = (32, 64, 128)
    backbone_width: int = 32
    r: int = 6

    def validate(self) -> None:
        if self.task not in ("enhance", "segment"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch size and epochs must be positive")
        if any(a <= b for a, b in zip(self.lr_stages, self.lr_stages[1:])):
            raise ConfigError(f"lr stages must be strictly decreasing, got {self.lr_stages}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip probability must be in [0,1], got {self.flip_prob}")
        if self.loss_reduction not in ("image_sum", "pixel_mean"):
            raise ConfigError(f"unknown loss reduction {self.loss_reduction!r}")

    def model_spec(self) -> ModelSpec:
        if self.task == "enhance":
            return ModelSpec(name="enhance", backbone_width=self.backbone_width, r=self.r)
        return ModelSpec(name="ufunkan", channels=tuple(self.channels), r=self.r)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "split_csv": self.split_csv,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr_stages": list(self.lr_stages),
            "stage_boundaries": self.stage_boundaries,
            "augment": self.augment,
            "noise_sigma": self.noise_sigma,
            "flip_prob": self.flip_prob,
            "loss_reduction": self.loss_reduction,
            "checkpoint_every": self.checkpoint_every,
            "channels": list(self.channels),
            "backbone_width": self.backbone_width,
            "r": self.r,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        cfg = TrainConfig()
        for key, value in d.items():
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown config field {key!r}")
            setattr(cfg, key, value)
        cfg.channels = tuple(cfg.channels)
        cfg.lr_stages = [float(v) for v in cfg.lr_stages]
        cfg.validate()
        return cfg

    @staticmethod
    def from_yaml(path: str | Path) -> "TrainConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text())
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return TrainConfig.from_dict(loaded)

    def to_yaml(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


# -- the loop --------------------------------------------------------------------------


@dataclass
class TrainResult:
    metrics_rows: list[dict]
    loss_curve: list[float]
    best_path: Path
    last_path: Path
    best_val_loss: float


def _stack(pairs: list[SamplePair]) -> tuple[Tensor, Tensor]:
    x = np.stack([p.input for p in pairs])[:, None, :, :]
    y = np.stack([p.target for p in pairs])[:, None, :, :]
    return Tensor(x), Tensor(y)


def _validate(model: Model, task: str, pairs: list[SamplePair],
              reduction: str) -> tuple[float, float]:
    """Returns (val_loss, val_metric); metric is PSNR or IoU depending on task."""
    losses = []
    scores = []
    with no_grad():
        for pair in pairs:
            x, y = _stack([pair])
            pred = model.forward(x, mode="eval")
            if task == "enhance":
                losses.append(loss_enhance(pred, y, reduction).item())
                scores.append(metrics.psnr(pred.data[0, 0], y.data[0, 0]))
            else:
                losses.append(loss_segment(pred, y).item())
                scores.append(metrics.iou(pred.data[0, 0], y.data[0, 0]))
    return float(np.mean(losses)), float(np.mean(scores))


def train(cfg: TrainConfig) -> TrainResult:
    """Run the staged-LR loop and write checkpoints plus a metrics CSV."""
    cfg.validate()
    split_path = Path(cfg.split_csv)
    rows = dataio.read_index(split_path)
    base = split_path.parent
    train_rows = [r for r in rows if r.role == "train"]
    val_rows = [r for r in rows if r.role == "val"]
    if not train_rows:
        raise DataError(f"{split_path}: no rows with role 'train'")
    if not val_rows:
        val_rows = train_rows  # degenerate desk-scale splits validate on train

    train_pairs = [dataio.load_pair(base, r) for r in train_rows]
    val_pairs = [dataio.load_pair(base, r) for r in val_rows]

    model = build(cfg.model_spec(), cfg.seed)
    params = dict(model.named_parameters())
    opt = Adam(params)

    seq = np.random.SeedSequence(cfg.seed)
    shuffle_rng, augment_rng = [np.random.default_rng(s) for s in seq.spawn(2)]

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "ckpt_best"
    last_path = out_dir / "ckpt_last"

    metrics_rows: list[dict] = []
    loss_curve: list[float] = []
    best_val = math.inf

    for epoch in range(cfg.epochs):
        lr = stage_lr(epoch, cfg.epochs, cfg.lr_stages, cfg.stage_boundaries)
        order = shuffle_rng.permutation(len(train_pairs))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start:start + cfg.batch_size]
            batch = [
                augment(train_pairs[i], cfg.task, augment_rng,
                        cfg.noise_sigma, cfg.flip_prob, cfg.augment)
                for i in batch_idx
            ]
            x, y = _stack(batch)
            pred = model.forward(x, mode="train")
            if cfg.task == "enhance":
                loss = loss_enhance(pred, y, cfg.loss_reduction)
            else:
                loss = loss_segment(pred, y)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            epoch_losses.append(loss.item())
            loss_curve.append(loss.item())

        val_loss, val_metric = _validate(model, cfg.task, val_pairs, cfg.loss_reduction)
        metrics_rows.append({
            "epoch": epoch,
            "stage_lr": lr,
            "train_loss": float(np.mean(epoch_losses)),
            "val_metric": val_metric,
        })

        if val_loss < best_val:
            best_val = val_loss
            checkpoint.save(model, cfg.seed, best_path)
        if (epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1:
            checkpoint.save(model, cfg.seed, last_path)

    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "stage_lr", "train_loss", "val_metric"])
        writer.writeheader()
        for row in metrics_rows:
            writer.writerow(row)

    return TrainResult(
        metrics_rows=metrics_rows,
        loss_curve=loss_curve,
        best_path=best_path.with_suffix(".json"),
        last_path=last_path.with_suffix(".json"),
        best_val_loss=best_val,
    )

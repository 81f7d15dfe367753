"""Host architectures: the enhancement network and the U-shaped segmenter.

Both wrap a backbone of three FunKAN blocks joined by additive identity
skips (x + block(x)). The segmenter adds a strided-convolution encoder
and a nearest-neighbor-upsampling decoder whose stages exchange additive
skip tensors; channel counts are arranged so every skip matches without
projection layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .layer import FunKanBlock
from .nn import BatchNorm2d, Conv2d
from .tensor import Tensor, add, relu, upsample_nearest2x


@dataclass
class ModelSpec:
    """Architecture description; (spec, seed) determines every parameter bit."""

    name: str = "enhance"  # enhance | ufunkan
    in_channels: int = 1
    out_channels: int = 1
    channels: tuple[int, int, int] = (32, 64, 128)  # encoder widths C1, C2, C3
    backbone_width: int = 32  # n for the enhancement backbone
    r: int = 6
    grid_extent: float = 3.0
    attention_norm: str = "softmax"
    mix_bias: bool = True

    def validate(self) -> None:
        if self.name not in ("enhance", "ufunkan"):
            raise ConfigError(f"unknown model spec {self.name!r}")
        if any(c <= 0 for c in self.channels):
            raise ConfigError(f"channel counts must be positive, got {self.channels}")
        if self.backbone_width <= 0 or self.r < 1:
            raise ConfigError("backbone width and basis size must be positive")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "channels": list(self.channels),
            "backbone_width": self.backbone_width,
            "r": self.r,
            "grid_extent": self.grid_extent,
            "attention_norm": self.attention_norm,
            "mix_bias": self.mix_bias,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        spec = ModelSpec(
            name=d["name"],
            in_channels=d.get("in_channels", 1),
            out_channels=d.get("out_channels", 1),
            channels=tuple(d.get("channels", (32, 64, 128))),
            backbone_width=d.get("backbone_width", 32),
            r=d.get("r", 6),
            grid_extent=d.get("grid_extent", 3.0),
            attention_norm=d.get("attention_norm", "softmax"),
            mix_bias=d.get("mix_bias", True),
        )
        spec.validate()
        return spec


class DownBlock:
    """Pre-activation residual block that halves resolution.

    main:     w2 . ReLU(BN(w1 . ReLU(BN(x))))   with w1 strided
    shortcut: ws . BN(x)                         (1x1, strided, no bias)
    """

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.bn_in = BatchNorm2d(cin)
        self.bn_mid = BatchNorm2d(cout)
        self.bn_sc = BatchNorm2d(cin)
        self.w1 = Conv2d(3, 3, cin, cout, rng, bias=True, stride=2)
        self.w2 = Conv2d(3, 3, cout, cout, rng, bias=True)
        self.ws = Conv2d(1, 1, cin, cout, rng, bias=False, stride=2)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        t = self.w1(relu(self.bn_in(x, mode)))
        t = self.w2(relu(self.bn_mid(t, mode)))
        return add(t, self.ws(self.bn_sc(x, mode)))

    def named_parameters(self, prefix: str):
        for name, part in (("bn_in", self.bn_in), ("bn_mid", self.bn_mid), ("bn_sc", self.bn_sc),
                           ("w1", self.w1), ("w2", self.w2), ("ws", self.ws)):
            yield from part.named_parameters(f"{prefix}.{name}")

    def named_stats(self, prefix: str):
        for name, part in (("bn_in", self.bn_in), ("bn_mid", self.bn_mid), ("bn_sc", self.bn_sc)):
            yield from part.named_stats(f"{prefix}.{name}")


class UpBlock:
    """Decoder block: x2 nearest-neighbor upsample, refine, add encoder skip."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.bn_in = BatchNorm2d(cin)
        self.bn_sc = BatchNorm2d(cin)
        self.w = Conv2d(3, 3, cin, cout, rng, bias=True)
        self.ws = Conv2d(1, 1, cin, cout, rng, bias=False)

    def __call__(self, x: Tensor, skip: Tensor, mode: str) -> Tensor:
        u = upsample_nearest2x(x)
        t = self.w(relu(self.bn_in(u, mode)))
        t = add(t, self.ws(self.bn_sc(u, mode)))
        if t.shape != skip.shape:
            raise ShapeError(f"decoder skip mismatch: {t.shape} vs {skip.shape}")
        return add(t, skip)

    def named_parameters(self, prefix: str):
        for name, part in (("bn_in", self.bn_in), ("bn_sc", self.bn_sc),
                           ("w", self.w), ("ws", self.ws)):
            yield from part.named_parameters(f"{prefix}.{name}")

    def named_stats(self, prefix: str):
        for name, part in (("bn_in", self.bn_in), ("bn_sc", self.bn_sc)):
            yield from part.named_stats(f"{prefix}.{name}")


class EnhancementNet:
    """Image-to-image restoration network with a three-block FunKAN backbone."""

    min_extent = 8

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        n = spec.backbone_width
        self.spec = spec
        self.embed = Conv2d(5, 5, spec.in_channels, 16, rng)
        self.lift = Conv2d(3, 3, 16, n, rng)
        self.blocks = [
            FunKanBlock(n, n, spec.r, rng, spec.grid_extent, spec.attention_norm, spec.mix_bias)
            for _ in range(3)
        ]
        self.project = Conv2d(3, 3, n, 16, rng)
        self.restore = Conv2d(1, 1, 16, spec.out_channels, rng)

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected [N,{self.spec.in_channels},h,w], got {x.shape}")
        if min(x.shape[2], x.shape[3]) < self.min_extent:
            raise ShapeError(f"spatial dims must be >= {self.min_extent}, got {x.shape}")
        t = self.embed(x)
        t = self.lift(relu(t))
        for block in self.blocks:
            t = add(t, block.forward(t, mode))
        t = self.project(relu(t))
        return self.restore(relu(t))

    __call__ = forward

    def named_parameters(self):
        yield from self.embed.named_parameters("embed")
        yield from self.lift.named_parameters("lift")
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"backbone.{i}")
        yield from self.project.named_parameters("project")
        yield from self.restore.named_parameters("restore")

    def named_stats(self):
        for i, block in enumerate(self.blocks):
            yield from block.named_stats(f"backbone.{i}")


class UFunKanNet:
    """U-shaped binary segmenter with FunKAN blocks at the bottleneck."""

    divisor = 16  # four halvings

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        c1, c2, c3 = spec.channels
        self.spec = spec
        self.embed = Conv2d(3, 3, spec.in_channels, 16, rng)
        self.encoder = [
            DownBlock(16, c1, rng),
            DownBlock(c1, c2, rng),
            DownBlock(c2, c3, rng),
            DownBlock(c3, c3, rng),
        ]
        self.blocks = [
            FunKanBlock(c3, c3, spec.r, rng, spec.grid_extent, spec.attention_norm, spec.mix_bias)
            for _ in range(3)
        ]
        self.decoder = [
            UpBlock(c3, c3, rng),
            UpBlock(c3, c2, rng),
            UpBlock(c2, c1, rng),
            UpBlock(c1, 16, rng),
        ]
        self.head = Conv2d(1, 1, 16, spec.out_channels, rng)

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected [N,{self.spec.in_channels},h,w], got {x.shape}")
        h, w = x.shape[2], x.shape[3]
        if h % self.divisor or w % self.divisor:
            raise ShapeError(f"spatial dims must be divisible by {self.divisor}, got ({h},{w})")

        e0 = self.embed(x)
        stages = [e0]
        t = e0
        for down in self.encoder:
            t = down(t, mode)
            stages.append(t)

        for block in self.blocks:
            t = add(t, block.forward(t, mode))

        for up, skip in zip(self.decoder, (stages[3], stages[2], stages[1], stages[0])):
            t = up(t, skip, mode)

        return self.head(relu(t))

    __call__ = forward

    def named_parameters(self):
        yield from self.embed.named_parameters("embed")
        for i, down in enumerate(self.encoder):
            yield from down.named_parameters(f"encoder.{i}")
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"backbone.{i}")
        for i, up in enumerate(self.decoder):
            yield from up.named_parameters(f"decoder.{i}")
        yield from self.head.named_parameters("head")

    def named_stats(self):
        for i, down in enumerate(self.encoder):
            yield from down.named_stats(f"encoder.{i}")
        for i, block in enumerate(self.blocks):
            yield from block.named_stats(f"backbone.{i}")
        for i, up in enumerate(self.decoder):
            yield from up.named_stats(f"decoder.{i}")


Model = EnhancementNet | UFunKanNet


def build(spec: ModelSpec, seed: int) -> Model:
    """Instantiate a model with seed-determined parameters."""
    spec.validate()
    rng = np.random.default_rng(seed)
    if spec.name == "enhance":
        return EnhancementNet(spec, rng)
    return UFunKanNet(spec, rng)


def count_params(model: Model) -> int:
    """Total trainable scalars (running statistics excluded)."""
    return sum(p.size for _, p in model.named_parameters())


# FLOP conventions, per layer kind (N = batch, counted per forward pass):
#   conv kh x kw, cin -> cout, output oh x ow:   2 * kh*kw*cin * cout * oh*ow * N
#   batch norm on [N,C,h,w]:                     2 * N*C*h*w   (scale + shift)
#   relu:                                        1 * N*C*h*w
#   FunKAN block on [N,n,h,w] with r basis fns:
#     offset predictor:    its convs + BNs + relus per the rules above
#     basis recurrence:    2 axes * (4r + 6) * N*n*h*w   (exp amortized as 6)
#     separable products:  r * N*n*h*w
#     weighted combine:    2r * N*n*h*w
#     grid deformation:    2 * N*n*h*w
#     attention softmax:   4 * n*r
#   upsample / additive skips: not counted (copies / single adds at most once
#     per tensor are below the conventions' resolution)


def _conv_flops(layer: Conv2d, n: int, h: int, w: int) -> tuple[int, int, int]:
    kh, kw, cin, cout = layer.kernel.shape
    oh = -(-h // layer.stride)
    ow = -(-w // layer.stride)
    return 2 * kh * kw * cin * cout * oh * ow * n, oh, ow


def _block_flops(block: FunKanBlock, n: int, h: int, w: int) -> int:
    c = block.n
    r = block.r
    per_map = n * c * h * w
    total = 0
    for conv in (block.offset.w0, block.offset.w1, block.offset.w2):
        f, _, _ = _conv_flops(conv, n, h, w)
        total += f
    total += 3 * 2 * per_map  # three batch norms
    total += 2 * per_map  # two relus
    total += 2 * (4 * r + 6) * per_map  # recurrence on both deformed axes
    total += r * per_map  # separable products
    total += 2 * r * per_map  # attention-weighted combination
    total += 2 * per_map  # grid deformation adds
    total += 4 * c * r  # softmax over attention logits
    f, _, _ = _conv_flops(block.theta, n, h, w)
    return total + f


def count_flops(model: Model, input_shape: tuple[int, int, int, int]) -> int:
    """Forward-pass FLOPs for the documented conventions above."""
    n, _, h, w = input_shape
    total = 0
    if isinstance(model, EnhancementNet):
        for conv in (model.embed, model.lift, model.project, model.restore):
            f, _, _ = _conv_flops(conv, n, h, w)
            total += f
        total += 3 * n * 16 * h * w  # relus around the stem and heads
        for block in model.blocks:
            total += _block_flops(block, n, h, w)
        return total

    f, _, _ = _conv_flops(model.embed, n, h, w)
    total += f
    ch, cw = h, w
    for down in model.encoder:
        cin = down.w1.kernel.shape[2]
        cout = down.w1.kernel.shape[3]
        f1, oh, ow = _conv_flops(down.w1, n, ch, cw)
        f2, _, _ = _conv_flops(down.w2, n, oh, ow)
        fs, _, _ = _conv_flops(down.ws, n, ch, cw)
        total += f1 + f2 + fs
        total += 2 * n * cin * ch * cw * 2  # bn_in + bn_sc
        total += 2 * n * cout * oh * ow  # bn_mid
        total += n * cin * ch * cw + n * cout * oh * ow  # relus
        ch, cw = oh, ow
    for block in model.blocks:
        total += _block_flops(block, n, ch, cw)
    for up in model.decoder:
        cin = up.w.kernel.shape[2]
        cout = up.w.kernel.shape[3]
        ch, cw = ch * 2, cw * 2
        f1, _, _ = _conv_flops(up.w, n, ch, cw)
        fs, _, _ = _conv_flops(up.ws, n, ch, cw)
        total += f1 + fs
        total += 2 * 2 * n * cin * ch * cw  # bn_in + bn_sc
        total += n * cin * ch * cw  # relu
    f, _, _ = _conv_flops(model.head, n, ch, cw)
    total += f + n * 16 * ch * cw
    return total


def layer_summary(model: Model, input_shape: tuple[int, int, int, int]) -> list[dict]:
    """Per-component parameter/FLOP table used by the summary command."""
    rows = []

    def group(name: str, params: int, flops: int | None):
        rows.append({"layer": name, "params": params, "flops": flops})

    def params_of(component, prefix: str) -> int:
        return sum(p.size for _, p in component.named_parameters(prefix))

    n, _, h, w = input_shape
    if isinstance(model, EnhancementNet):
        group("embed (5x5)", params_of(model.embed, "embed"), _conv_flops(model.embed, n, h, w)[0])
        group("lift (3x3)", params_of(model.lift, "lift"), _conv_flops(model.lift, n, h, w)[0])
        for i, block in enumerate(model.blocks):
            group(f"funkan_block.{i}", params_of(block, "b"), _block_flops(block, n, h, w))
        group("project (3x3)", params_of(model.project, "p"), _conv_flops(model.project, n, h, w)[0])
        group("restore (1x1)", params_of(model.restore, "r"), _conv_flops(model.restore, n, h, w)[0])
    else:
        group("embed (3x3)", params_of(model.embed, "embed"), _conv_flops(model.embed, n, h, w)[0])
        ch, cw = h, w
        for i, down in enumerate(model.encoder):
            f1, oh, ow = _conv_flops(down.w1, n, ch, cw)
            f2, _, _ = _conv_flops(down.w2, n, oh, ow)
            fs, _, _ = _conv_flops(down.ws, n, ch, cw)
            group(f"encoder.{i}", params_of(down, "e"), f1 + f2 + fs)
            ch, cw = oh, ow
        for i, block in enumerate(model.blocks):
            group(f"funkan_block.{i}", params_of(block, "b"), _block_flops(block, n, ch, cw))
        for i, up in enumerate(model.decoder):
            ch, cw = ch * 2, cw * 2
            f1, _, _ = _conv_flops(up.w, n, ch, cw)
            fs, _, _ = _conv_flops(up.ws, n, ch, cw)
            group(f"decoder.{i}", params_of(up, "d"), f1 + fs)
        group("head (1x1)", params_of(model.head, "h"), _conv_flops(model.head, n, ch, cw)[0])
    return rows

"""Truncation-artifact synthesis: spectral crop pipeline and phantom images.

The corruption protocol transforms a high-resolution image to the
frequency domain, keeps only a centered window of the spectrum (no
zero-padding), and inverse-transforms at the reduced size. The missing
high frequencies turn every sharp edge into the familiar oscillatory
ringing pattern.

Phantoms stand in for clinical data at desk scale: seeded collections of
ellipses and rectangles on [0,1]^2, rasterized by supersampled coverage
so both the high-resolution source and the clean low-resolution target
come from the same analytic geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

# -- spectral transforms -----------------------------------------------------


@dataclass
class ComplexImage:
    """Centered 2-D spectrum stored as separate real/imaginary planes."""

    real: np.ndarray
    imag: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.real.shape

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag

    @staticmethod
    def from_complex(z: np.ndarray) -> "ComplexImage":
        return ComplexImage(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))


def dft2(img: np.ndarray) -> ComplexImage:
    """Forward transform (unscaled sums), returned in centered layout.

    The DC bin sits at (h//2, w//2) after the quadrant swap, so a
    centered crop is a plain slice.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 2:
        raise ShapeError(f"dft2 expects a 2-D image with h,w >= 2, got {img.shape}")
    return ComplexImage.from_complex(np.fft.fftshift(np.fft.fft2(img)))


def idft2(spectrum: ComplexImage) -> ComplexImage:
    """Inverse transform with the 1/(h*w) normalization."""
    z = np.fft.ifft2(np.fft.ifftshift(spectrum.to_complex()))
    return ComplexImage.from_complex(z)


def kspace_crop(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Reconstruct at (out_h, out_w) from the central spectral window.

    The window is scaled by (out_h*out_w)/(H*W) so mean intensity is
    preserved; the real plane of the inverse transform is returned.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if out_h > h or out_w > w:
        raise ShapeError(f"crop ({out_h},{out_w}) exceeds source ({h},{w})")
    if (h - out_h) % 2 or (w - out_w) % 2:
        raise ShapeError(
            f"crop parity mismatch: ({h},{w}) -> ({out_h},{out_w}) has no centered window"
        )
    spectrum = dft2(img).to_complex()
    top = (h - out_h) // 2
    left = (w - out_w) // 2
    window = spectrum[top:top + out_h, left:left + out_w] * (out_h * out_w / (h * w))
    return idft2(ComplexImage.from_complex(window)).real


# -- phantom geometry -----------------------------------------------------------


@dataclass
class Ellipse:
    cx: float
    cy: float
    rx: float
    ry: float
    intensity: float

    def covers(self, x, y):
        return ((x - self.cx) / self.rx) ** 2 + ((y - self.cy) / self.ry) ** 2 <= 1.0


@dataclass
class Rect:
    cx: float
    cy: float
    hw: float
    hh: float
    intensity: float

    def covers(self, x, y):
        return (np.abs(x - self.cx) <= self.hw) & (np.abs(y - self.cy) <= self.hh)


Shape = Ellipse | Rect


@dataclass
class PhantomSpec:
    """Sampling recipe (or explicit geometry) for one phantom image."""

    canvas: int = 255
    crop: int = 145
    n_ellipses: tuple[int, int] = (1, 3)
    n_rects: tuple[int, int] = (1, 3)
    intensity: tuple[float, float] = (0.25, 1.0)
    background: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    shapes: list[Shape] | None = None  # overrides sampling when given

    min_edge_contrast: float = 0.2


@dataclass
class SamplePair:
    """Input image, target (image or mask), and provenance."""

    input: np.ndarray
    target: np.ndarray
    meta: dict = field(default_factory=dict)


def sample_shapes(spec: PhantomSpec, rng: np.random.Generator) -> list[Shape]:
    shapes: list[Shape] = []
    lo, hi = spec.intensity
    for _ in range(rng.integers(spec.n_ellipses[0], spec.n_ellipses[1] + 1)):
        shapes.append(Ellipse(
            cx=rng.uniform(0.2, 0.8), cy=rng.uniform(0.2, 0.8),
            rx=rng.uniform(0.08, 0.3), ry=rng.uniform(0.08, 0.3),
            intensity=rng.uniform(lo, hi),
        ))
    for _ in range(rng.integers(spec.n_rects[0], spec.n_rects[1] + 1)):
        shapes.append(Rect(
            cx=rng.uniform(0.2, 0.8), cy=rng.uniform(0.2, 0.8),
            hw=rng.uniform(0.06, 0.25), hh=rng.uniform(0.06, 0.25),
            intensity=rng.uniform(lo, hi),
        ))
    rng.shuffle(shapes)
    return shapes


def render(shapes: list[Shape], h: int, w: int, background: float = 0.0,
           supersample: int = 4) -> np.ndarray:
    """Rasterize with painter's order and supersampled edge coverage."""
    ss = supersample
    ys = (np.arange(h * ss) + 0.5) / (h * ss)
    xs = (np.arange(w * ss) + 0.5) / (w * ss)
    fine = np.full((h * ss, w * ss), background, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    for shape in shapes:
        inside = shape.covers(gx, gy)
        fine[inside] = shape.intensity
    return fine.reshape(h, ss, w, ss).mean(axis=(1, 3))


def rasterize_mask(shapes: list[Shape], h: int, w: int) -> np.ndarray:
    """Binary union of the shapes, evaluated at pixel centers."""
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    gx, gy = np.meshgrid(xs, ys)
    mask = np.zeros((h, w), dtype=bool)
    for shape in shapes:
        mask |= shape.covers(gx, gy)
    return mask.astype(np.float32)


def max_edge_gradient(img: np.ndarray) -> float:
    """Largest forward-difference magnitude; the sharp-edge criterion."""
    dx = np.abs(np.diff(img, axis=1)).max(initial=0.0)
    dy = np.abs(np.diff(img, axis=0)).max(initial=0.0)
    return float(max(dx, dy))


def _resolve_shapes(spec: PhantomSpec, rng: np.random.Generator,
                    h: int, w: int) -> list[Shape]:
    if spec.shapes is not None:
        return list(spec.shapes)
    for _ in range(32):
        shapes = sample_shapes(spec, rng)
        probe = render(shapes, h, w, spec.background)
        if max_edge_gradient(probe) >= spec.min_edge_contrast:
            return shapes
    raise DataError(f"could not sample a phantom with a sharp edge (seed {spec.seed})")


def make_pair(spec: PhantomSpec) -> SamplePair:
    """Corrupted input / clean target pair for the enhancement task.

    The clean target is rendered analytically at crop resolution; the
    input is the spectral crop of the same geometry rendered at canvas
    resolution.
    """
    rng = np.random.default_rng(spec.seed)
    shapes = _resolve_shapes(spec, rng, spec.crop, spec.crop)
    high_res = render(shapes, spec.canvas, spec.canvas, spec.background)
    corrupted = kspace_crop(high_res, spec.crop, spec.crop)
    clean = render(shapes, spec.crop, spec.crop, spec.background)
    return SamplePair(
        input=corrupted.astype(np.float32),
        target=clean.astype(np.float32),
        meta={"seed": spec.seed, "task": "enhance", "canvas": spec.canvas,
              "crop": spec.crop, "shapes": shapes},
    )


def make_mask_pair(spec: PhantomSpec) -> SamplePair:
    """Blob image / binary mask pair for the segmentation task."""
    if spec.canvas % 16:
        raise ShapeError(f"segmentation canvas must be divisible by 16, got {spec.canvas}")
    rng = np.random.default_rng(spec.seed)
    if spec.shapes is not None:
        shapes = list(spec.shapes)
    else:
        shapes = _resolve_shapes(spec, rng, spec.canvas, spec.canvas)
    image = render(shapes, spec.canvas, spec.canvas, spec.background)
    if spec.noise_sigma > 0:
        image = np.clip(image + rng.normal(0.0, spec.noise_sigma, size=image.shape), 0.0, 1.0)
    mask = rasterize_mask(shapes, spec.canvas, spec.canvas)
    return SamplePair(
        input=image.astype(np.float32),
        target=mask,
        meta={"seed": spec.seed, "task": "segment", "canvas": spec.canvas, "shapes": shapes},
    )

"""Sample-pair files: 16-bit PNG previews, float32 sidecars, index CSVs.

Every generated pair is stored as four files sharing a stem:
``<stem>_input.png/.f32`` and ``<stem>_target.png/.f32``. The PNG holds
[0,1] mapped to the full 16-bit range for inspection; the raw sidecar
keeps the exact float32 values for lossless metric evaluation.

The index CSV (columns ``path,seed,role,height,width``) written next to
the files doubles as a training split file: the trainer only consumes
``path`` and ``role``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .gibbs import SamplePair

INDEX_NAME = "index.csv"
ROLES = ("train", "val", "test")


def write_png16(path: Path, img: np.ndarray) -> None:
    scaled = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 65535.0
    Image.fromarray(scaled.round().astype(np.uint16)).save(path)


def read_png16(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 65535.0


def png_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as im:
        return im.size[1], im.size[0]


def write_f32(path: Path, img: np.ndarray) -> None:
    np.asarray(img, dtype="<f4").tofile(path)


def read_f32(path: Path, shape: tuple[int, int]) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    expected = shape[0] * shape[1]
    if data.size != expected:
        raise DataError(f"{path}: expected {expected} floats, found {data.size}")
    return data.reshape(shape)


@dataclass
class IndexRow:
    path: str  # pair stem, relative to the index file
    seed: int
    role: str
    height: int
    width: int


def save_pair(out_dir: Path, stem: str, pair: SamplePair) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_png16(out_dir / f"{stem}_input.png", pair.input)
    write_f32(out_dir / f"{stem}_input.f32", pair.input)
    write_png16(out_dir / f"{stem}_target.png", pair.target)
    write_f32(out_dir / f"{stem}_target.f32", pair.target)


def load_pair(base_dir: Path, row: IndexRow) -> SamplePair:
    shape = (row.height, row.width)
    return SamplePair(
        input=read_f32(base_dir / f"{row.path}_input.f32", shape).astype(np.float32),
        target=read_f32(base_dir / f"{row.path}_target.f32", shape).astype(np.float32),
        meta={"seed": row.seed, "role": row.role, "path": row.path},
    )


def write_index(path: Path, rows: list[IndexRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "seed", "role", "height", "width"])
        for row in rows:
            writer.writerow([row.path, row.seed, row.role, row.height, row.width])


def read_index(path: Path) -> list[IndexRow]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"split file not found: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "path" not in reader.fieldnames or "role" not in reader.fieldnames:
            raise DataError(f"{path}: split file needs 'path' and 'role' columns")
        for record in reader:
            role = record["role"].strip()
            if role not in ROLES:
                raise DataError(f"{path}: unknown role {role!r}")
            rows.append(IndexRow(
                path=record["path"].strip(),
                seed=int(record.get("seed", 0) or 0),
                role=role,
                height=int(record["height"]),
                width=int(record["width"]),
            ))
    if not rows:
        raise DataError(f"{path}: split file is empty")
    return rows

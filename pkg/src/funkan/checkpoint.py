"""Checkpoint I/O: JSON manifest plus a little-endian float32 blob.

The manifest records the model spec, the build seed, and a named table
of every stored array (parameters and batch-norm running statistics)
with shape and byte offset into the companion ``.bin`` blob.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .models import Model, ModelSpec, build

FORMAT_VERSION = 1
_BLOB_DTYPE = np.dtype("<f4")


def _entries(model: Model):
    for name, p in model.named_parameters():
        yield f"{name}", "param", p.data
    for name, bn in model.named_stats():
        yield f"{name}.running_mean", "stat", bn.mean
        yield f"{name}.running_var", "stat", bn.var


def save(model: Model, seed: int, path: str | Path) -> Path:
    """Write ``path``.json and ``path``.bin; returns the manifest path."""
    path = Path(path)
    if path.suffix == ".json":
        path = path.with_suffix("")
    manifest_path = path.with_suffix(".json")
    blob_path = path.with_suffix(".bin")

    table = []
    chunks = []
    offset = 0
    for name, kind, data in _entries(model):
        flat = np.ascontiguousarray(data, dtype=_BLOB_DTYPE).ravel()
        table.append({
            "name": name,
            "kind": kind,
            "shape": list(data.shape),
            "offset": offset,
            "size": int(flat.size),
        })
        chunks.append(flat)
        offset += flat.nbytes

    bn_flags = {name: bool(bn.initialized) for name, bn in model.named_stats()}
    manifest = {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "seed": seed,
        "tensors": table,
        "bn_initialized": bn_flags,
    }

    blob_path.write_bytes(b"".join(c.tobytes() for c in chunks))
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest_path


def load(path: str | Path) -> tuple[Model, int]:
    """Rebuild a model from a checkpoint; returns (model, seed)."""
    path = Path(path)
    if path.suffix == ".json":
        path = path.with_suffix("")
    manifest_path = path.with_suffix(".json")
    blob_path = path.with_suffix(".bin")
    if not manifest_path.exists() or not blob_path.exists():
        raise DataError(f"checkpoint incomplete: need {manifest_path} and {blob_path}")

    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format {manifest.get('format_version')}")
    blob = np.frombuffer(blob_path.read_bytes(), dtype=_BLOB_DTYPE)

    spec = ModelSpec.from_dict(manifest["spec"])
    seed = int(manifest["seed"])
    model = build(spec, seed)

    stored = {row["name"]: row for row in manifest["tensors"]}
    for name, kind, data in _entries(model):
        row = stored.pop(name, None)
        if row is None:
            raise DataError(f"checkpoint missing tensor {name!r}")
        if tuple(row["shape"]) != data.shape:
            raise DataError(f"checkpoint shape mismatch for {name!r}: "
                            f"{tuple(row['shape'])} vs {data.shape}")
        start = row["offset"] // _BLOB_DTYPE.itemsize
        values = blob[start:start + row["size"]].reshape(data.shape)
        data[...] = values.astype(data.dtype)
    if stored:
        raise DataError(f"checkpoint has unknown tensors: {sorted(stored)}")

    for name, bn in model.named_stats():
        bn.initialized = bool(manifest["bn_initialized"].get(name, False))
    return model, seed

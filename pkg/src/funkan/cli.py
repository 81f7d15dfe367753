"""Command-line entry point.

Subcommands: synth, train, eval, infer, inspect attention, basis dump,
summary. Every command that produces files writes a ``manifest.json``
with the resolved arguments beside its outputs, and refuses to reuse a
non-empty output directory unless ``--force`` is given.

Exit codes: 0 success, 2 configuration errors (including argparse usage
errors), 3 data errors, 4 numeric failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, dataio, gibbs, metrics, models, training
from .errors import ConfigError, DataError, FunkanError, NumericError
from .hermite import HermiteBasis, uniform_grid
from .tensor import Tensor, no_grad

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _prepare_out_dir(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def _write_manifest(out: Path, command: str, args: dict) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "arguments": {k: (str(v) if isinstance(v, Path) else v) for k, v in args.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _heatmap(path: Path, data: np.ndarray) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(data, aspect="auto", cmap="viridis")
    fig.colorbar(im, ax=ax)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


# -- synth -------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    rows = []
    n_val = int(args.count * args.val_frac)
    n_test = int(args.count * args.test_frac)
    n_train = args.count - n_val - n_test
    if n_train < 1:
        raise ConfigError("count too small for the requested val/test fractions")
    for i in range(args.count):
        seed = args.seed + i
        spec = gibbs.PhantomSpec(canvas=args.canvas, crop=args.size, seed=seed)
        if args.task == "enhance":
            pair = gibbs.make_pair(spec)
        else:
            spec.canvas = args.size
            spec.noise_sigma = args.noise
            pair = gibbs.make_mask_pair(spec)
        role = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        stem = f"pair_{i:05d}"
        dataio.save_pair(out, stem, pair)
        h, w = pair.input.shape
        rows.append(dataio.IndexRow(path=stem, seed=seed, role=role, height=h, width=w))
    dataio.write_index(out / dataio.INDEX_NAME, rows)
    _write_manifest(out, "synth", vars(args))
    print(f"wrote {args.count} {args.task} pairs to {out}")
    return 0


# -- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = training.TrainConfig.from_yaml(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    out = Path(cfg.out_dir)
    _prepare_out_dir(out, args.force)
    result = training.train(cfg)
    _write_manifest(out, "train", {"config": str(args.config), **cfg.to_dict()})
    final = result.metrics_rows[-1]
    print(f"trained {cfg.epochs} epochs; final train loss {final['train_loss']:.6f}, "
          f"val metric {final['val_metric']:.4f}")
    print(f"checkpoints: {result.best_path} (best), {result.last_path} (last)")
    return 0


# -- eval ----------------------------------------------------------------------


_ROLE_SUFFIXES = ("_input", "_target", "_pred")


def _pair_key(stem: str) -> str:
    for suffix in _ROLE_SUFFIXES:
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def _collect_images(directory: Path) -> dict[str, np.ndarray]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    images: dict[str, np.ndarray] = {}
    for f32 in sorted(directory.glob("*.f32")):
        png = f32.with_suffix(".png")
        if not png.exists():
            raise DataError(f"{f32}: missing PNG sibling to recover the shape")
        images[_pair_key(f32.stem)] = dataio.read_f32(f32, dataio.png_size(png))
    if not images:
        raise DataError(f"{directory}: no .f32 images found")
    return images


def cmd_eval(args) -> int:
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    known = {"psnr", "tv", "iou", "f1"}
    unknown = set(wanted) - known
    if unknown:
        raise ConfigError(f"unknown metrics: {sorted(unknown)} (choose from {sorted(known)})")
    preds = _collect_images(Path(args.pred))
    targets = _collect_images(Path(args.target))
    keys = sorted(set(preds) & set(targets))
    if not keys:
        raise DataError("no matching image keys between pred and target directories")

    columns: dict[str, list[float]] = {m: [] for m in wanted}
    for key in keys:
        p, t = preds[key], targets[key]
        for m in wanted:
            if m == "psnr":
                columns[m].append(metrics.psnr(p, t))
            elif m == "tv":
                columns[m].append(metrics.total_variation(p))
            elif m == "iou":
                columns[m].append(metrics.iou(p, t, logits=args.logits))
            elif m == "f1":
                columns[m].append(metrics.f1(p, t, logits=args.logits))

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image"] + wanted)
        for i, key in enumerate(keys):
            writer.writerow([key] + [columns[m][i] for m in wanted])
        means = [metrics.report(m, columns[m]).mean for m in wanted]
        stds = [metrics.report(m, columns[m]).std for m in wanted]
        writer.writerow(["mean"] + means)
        writer.writerow(["std"] + stds)
    for m in wanted:
        print(metrics.report(m, columns[m]).summary())
    print(f"report written to {out_path}")
    return 0


# -- infer ---------------------------------------------------------------------


def cmd_infer(args) -> int:
    model, _ = checkpoint.load(args.ckpt)
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    inputs = {k: v for k, v in _collect_images(Path(args.input)).items()}
    index_path = Path(args.input) / dataio.INDEX_NAME
    segment = isinstance(model, models.UFunKanNet)
    for key in sorted(inputs):
        x = Tensor(inputs[key].astype(np.float32)[None, None])
        with no_grad():
            pred = model.forward(x, mode="eval")
        img = pred.data[0, 0]
        if segment:
            img = 1.0 / (1.0 + np.exp(-img))  # probabilities for thresholding
        dataio.write_f32(out / f"{key}_pred.f32", img)
        dataio.write_png16(out / f"{key}_pred.png", img)
    _write_manifest(out, "infer", vars(args))
    print(f"wrote {len(inputs)} predictions to {out}")
    if index_path.exists():
        print(f"(targets for scoring are beside {index_path})")
    return 0


# -- inspect attention ------------------------------------------------------------


def cmd_inspect_attention(args) -> int:
    model, _ = checkpoint.load(args.ckpt)
    blocks = model.blocks
    if not 0 <= args.layer < len(blocks):
        raise ConfigError(f"layer index {args.layer} out of range (0..{len(blocks) - 1})")
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    matrix = blocks[args.layer].attention()
    with open(out / f"attention_layer{args.layer}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"k{k}" for k in range(matrix.shape[1])])
        for row in matrix:
            writer.writerow([f"{v:.8f}" for v in row])
    _heatmap(out / f"attention_layer{args.layer}.png", matrix)
    _write_manifest(out, "inspect attention", vars(args))
    print(f"attention matrix {matrix.shape} written to {out}")
    return 0


# -- basis dump ---------------------------------------------------------------------


def cmd_basis_dump(args) -> int:
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    basis = HermiteBasis(args.r)
    qx, qy = uniform_grid(args.height, args.width, args.extent)
    for k in range(args.r):
        surface = basis.eval_separable_2d(k, qx, qy).data
        dataio.write_f32(out / f"psi_{k}.f32", surface)
        lo, hi = surface.min(), surface.max()
        scaled = (surface - lo) / (hi - lo) if hi > lo else np.zeros_like(surface)
        dataio.write_png16(out / f"psi_{k}.png", scaled)
    _write_manifest(out, "basis dump", vars(args))
    print(f"wrote {args.r} basis maps ({args.height}x{args.width}) to {out}")
    return 0


# -- summary --------------------------------------------------------------------------

REFERENCE_PARAMS = {"enhance": 2.2e6, "ufunkan": 3.6e6}


def cmd_summary(args) -> int:
    spec = models.ModelSpec(
        name=args.spec,
        channels=(args.c1, args.c2, args.c3),
        backbone_width=args.width_n,
        r=args.r,
    )
    model = models.build(spec, seed=0)
    default_hw = 145 if args.spec == "enhance" else 256
    h = args.height or default_hw
    w = args.width or default_hw
    if args.spec == "ufunkan" and (h % 16 or w % 16):
        raise ConfigError(f"ufunkan input dims must be divisible by 16, got ({h},{w})")
    shape = (1, spec.in_channels, h, w)
    rows = models.layer_summary(model, shape)
    name_w = max(len(r["layer"]) for r in rows)
    print(f"{args.spec} on input {shape}")
    print(f"{'layer'.ljust(name_w)}  {'params':>12}  {'flops':>16}")
    for row in rows:
        print(f"{row['layer'].ljust(name_w)}  {row['params']:>12,}  {row['flops']:>16,}")
    total_p = models.count_params(model)
    total_f = models.count_flops(model, shape)
    print(f"{'total'.ljust(name_w)}  {total_p:>12,}  {total_f:>16,}")
    ref = REFERENCE_PARAMS.get(args.spec)
    if ref and tuple(spec.channels) == (32, 64, 128) and spec.backbone_width == 32:
        print(f"published reference count: {ref / 1e6:.1f} M parameters; this build has "
              f"{total_p / 1e6:.2f} M. The written description leaves several widths "
              f"unstated, so totals are reported side by side rather than matched.")
    return 0


# -- parser wiring ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funkan", description=__doc__)
    parser.add_argument("--version", action="version", version=f"funkan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate phantom sample pairs")
    p.add_argument("--task", choices=("enhance", "segment"), required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=None,
                   help="output image size (enhance: crop size; segment: canvas)")
    p.add_argument("--canvas", type=int, default=None,
                   help="high-resolution render size for the enhance task")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--test-frac", type=float, default=0.1)
    p.add_argument("--noise", type=float, default=0.0, help="segment-task image noise sigma")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run the training loop from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None, help="override the config's out_dir")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score prediction files against targets")
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--metrics", default="psnr,tv")
    p.add_argument("--out", default="report.csv")
    p.add_argument("--logits", action="store_true",
                   help="treat prediction values as logits for iou/f1")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run a checkpoint over a directory of inputs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("inspect", help="introspection tools")
    inspect_sub = p.add_subparsers(dest="inspect_command", required=True)
    q = inspect_sub.add_parser("attention", help="dump a block's normalized attention matrix")
    q.add_argument("--ckpt", required=True)
    q.add_argument("--layer", type=int, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--force", action="store_true")
    q.set_defaults(func=cmd_inspect_attention)

    p = sub.add_parser("basis", help="basis function tools")
    basis_sub = p.add_subparsers(dest="basis_command", required=True)
    q = basis_sub.add_parser("dump", help="write each basis surface as PNG and raw floats")
    q.add_argument("--r", type=int, default=6)
    q.add_argument("--h", dest="height", type=int, default=64)
    q.add_argument("--w", dest="width", type=int, default=64)
    q.add_argument("--extent", type=float, default=3.0)
    q.add_argument("--out", required=True)
    q.add_argument("--force", action="store_true")
    q.set_defaults(func=cmd_basis_dump)

    p = sub.add_parser("summary", help="per-layer parameter and FLOP table")
    p.add_argument("--spec", choices=("enhance", "ufunkan"), required=True)
    p.add_argument("--c1", type=int, default=32)
    p.add_argument("--c2", type=int, default=64)
    p.add_argument("--c3", type=int, default=128)
    p.add_argument("--width-n", type=int, default=32, help="enhancement backbone width")
    p.add_argument("--r", type=int, default=6)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.set_defaults(func=cmd_summary)

    return parser


def _default_sizes(args) -> None:
    if args.command == "synth":
        if args.task == "enhance":
            if args.size is None:
                args.size = 145
            if args.canvas is None:
                # keep the canonical 255->145 ratio and matching parity
                canvas = round(args.size * 255 / 145)
                if (canvas - args.size) % 2:
                    canvas += 1
                args.canvas = canvas
        else:
            if args.size is None:
                args.size = 64
            if args.size % 16:
                raise ConfigError(f"segment size must be divisible by 16, got {args.size}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _default_sizes(args)
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except FunkanError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

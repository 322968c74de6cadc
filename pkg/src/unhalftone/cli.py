"""Command-line interface.

Subcommands: ``halftone``, ``dataset``, ``train``, ``infer``, ``eval``,
``verify``. Exit codes: 0 success, 1 usage error, 2 data error (missing
or malformed inputs), 3 numeric failure (NaN or divergence), 4 property
check failure. Every run echoes its resolved configuration to stderr,
and all randomness in a command flows from its single ``--seed``.

Signed layers written by ``infer --emit-layers`` and ``dataset`` are
offset-encoded as (v + 1) / 2 so they fit the PGM range; sidecar
manifests name the encoding.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import networks, tensor_nn, training
from .backend import BACKEND
from .filters import convolve_same, gaussian_kernel
from .halftone import floyd_steinberg
from .imagecore import (
    ImageFormatError,
    clamp01,
    load_image,
    load_pgm,
    merge_planes,
    save_image,
    save_pgm,
    split_planes,
    to_grayscale,
)
from .metrics import psnr_color, psnr, residual_histogram, ssim, ssim_color
from .networks import UntrainedModelError, load_bundle, new_bundle, save_bundle
from .training import NumericError, TrainConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_PROPERTY = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _echo_config(args: argparse.Namespace) -> None:
    for key in sorted(vars(args)):
        if key.startswith("_") or key == "func":
            continue
        print(f"[config] {key} = {getattr(args, key)}", file=sys.stderr)
    print(f"[config] backend = {BACKEND}", file=sys.stderr)


# ---------------------------------------------------------------------------
# halftone


def _cmd_halftone(args) -> int:
    img = load_pgm(args.input)
    save_pgm(floyd_steinberg(img), args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# dataset


def _list_images(corpus: Path) -> list[Path]:
    return sorted(p for p in corpus.iterdir() if p.suffix.lower() in (".pgm", ".ppm"))


def _cmd_dataset(args) -> int:
    corpus = Path(args.corpus_dir)
    if not corpus.is_dir():
        raise FileNotFoundError(f"corpus directory {corpus} does not exist")
    paths = _list_images(corpus)
    if not paths:
        raise ValueError(f"no .pgm or .ppm images found in {corpus}")
    images = [load_image(p) for p in paths]
    per_image = -(-args.patches // len(images))  # ceil
    triplets = training.build_dataset(
        images, patch_size=args.patch_size, patches_per_image=per_image, seed=args.seed
    )
    triplets = triplets[: args.patches]
    if len(triplets) != args.patches:
        raise ValueError(
            f"requested {args.patches} triplets but produced {len(triplets)}"
        )
    training.save_triplets(args.out_dir, triplets)
    print(f"wrote {len(triplets)} triplets to {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _cmd_train(args) -> int:
    cfg = TrainConfig()
    if args.config:
        cfg = training.parse_config(args.config, cfg)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg = replace(cfg, stage=args.stage)

    triplets = training.load_triplets(args.data)
    if not triplets:
        raise ValueError(f"dataset at {args.data} is empty")
    val = training.load_triplets(args.val_data) if args.val_data else None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.resume:
        bundle = load_bundle(args.resume)
    elif args.stage == 1 and args.variant == "layered":
        bundle = new_bundle(cfg.seed, cfg.blocks, cfg.head_blocks,
                            cfg.hidden_channels, cfg.blur_sigma, cfg.blur_side)
    else:
        raise ValueError(
            f"stage {args.stage} ({args.variant}) requires --resume with the "
            f"previous stage's bundle checkpoint"
        )

    if args.variant != "layered":
        if args.stage != 3:
            raise ValueError("baseline variants replace stage 3; use --stage 3")
        log_path = out / f"train_baseline_{args.variant}.csv"
        params, log = training.train_baseline(args.variant, triplets, cfg, bundle, log_path)
        tensor_nn.save_checkpoint(out / f"baseline_{args.variant}.ckpt",
                                  f"baseline_{args.variant}", params)
        save_bundle(out, bundle)
        print(f"final loss {log.rows[-1]['loss_total']} "
              f"(log {log_path}, checkpoint baseline_{args.variant}.ckpt)")
        return EXIT_OK

    offset = bundle.epochs_trained.get(args.stage, 0) if args.resume else 0
    log_path = out / f"train_stage{args.stage}.csv"
    stage_fn = {1: training.train_stage1, 2: training.train_stage2}.get(args.stage)
    if stage_fn is not None:
        log = stage_fn(triplets, cfg, bundle, log_path, val, epoch_offset=offset)
    else:
        log = training.train_stage3(triplets, cfg, bundle, log_path, epoch_offset=offset)
    save_bundle(out, bundle)
    train_rows = [r for r in log.rows if not r["stage"].endswith("val")]
    print(f"stage {args.stage} done: first epoch loss {train_rows[0]['loss_total']}, "
          f"last {train_rows[-1]['loss_total']} (bundle in {out})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer


def _reconstruct_plane(half, bundle, emit_stem: str | None) -> np.ndarray:
    """One plane through the pipeline, optionally emitting its layers."""
    base, _ = networks.predict_base(half, bundle)
    laplacian, _ = networks.predict_structure_map(half, bundle)
    detail = networks.predict_detail(base, laplacian, half, bundle)
    if emit_stem is not None:
        save_pgm(base, f"{emit_stem}_base.pgm")
        save_pgm((detail + 1.0) / 2.0, f"{emit_stem}_detail.pgm")
        save_pgm((laplacian + 1.0) / 2.0, f"{emit_stem}_laplacian.pgm")
    return clamp01(base + detail)


def _cmd_infer(args) -> int:
    bundle = load_bundle(args.model_dir)
    if bundle.stage_done < 3:
        raise UntrainedModelError(
            f"bundle at {args.model_dir} is trained through stage "
            f"{bundle.stage_done}; inference needs all three stages"
        )
    img = load_image(args.input)
    out_path = Path(args.output)
    stem = str(out_path.with_suffix("")) if args.emit_layers else None
    if img.ndim == 2:
        save_pgm(_reconstruct_plane(img, bundle, stem), out_path)
    else:
        planes = split_planes(img)
        recon = [
            _reconstruct_plane(p, bundle, f"{stem}{sfx}" if stem else None)
            for sfx, p in zip(("_r", "_g", "_b"), planes)
        ]
        save_image(merge_planes(*recon), out_path)
    if args.emit_layers:
        Path(f"{stem}_layers.txt").write_text(
            "base: raw values clamped to [0,1] on write\n"
            "detail: offset-encoded (v+1)/2\n"
            "laplacian: offset-encoded (v+1)/2\n",
            encoding="ascii",
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _cmd_eval(args) -> int:
    manifest = Path(args.manifest)
    root = manifest.parent
    rows_out = []
    psnrs, ssims = [], []
    with open(manifest, newline="", encoding="ascii") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"name", "image", "reference"} <= set(
            reader.fieldnames
        ):
            raise ValueError("manifest needs a header with name,image,reference")
        for row in reader:
            name = row["name"]
            try:
                a = load_image(root / row["image"])
                b = load_image(root / row["reference"])
                if a.ndim != b.ndim:
                    raise ValueError("grayscale/color mismatch")
                if a.ndim == 3:
                    p = psnr_color(a, b, args.psnr_mode)
                    s = ssim_color(a, b, args.ssim_mode)
                else:
                    p = psnr(a, b)
                    s = ssim(a, b)
                psnrs.append(p)
                ssims.append(s)
                rows_out.append([name, _fmt(p), f"{s:.6f}", ""])
            except (OSError, ValueError) as exc:
                rows_out.append([name, "", "", str(exc)])
    if not psnrs:
        raise ValueError("no pair in the manifest could be evaluated")
    rows_out.append(["AVG", _fmt(float(np.mean(psnrs))), f"{np.mean(ssims):.6f}", ""])
    dest = open(args.out, "w", newline="", encoding="ascii") if args.out else sys.stdout
    try:
        writer = csv.writer(dest)
        writer.writerow(["name", "psnr_db", "ssim", "error"])
        writer.writerows(rows_out)
    finally:
        if args.out:
            dest.close()
    return EXIT_OK


def _fmt(p: float) -> str:
    return "inf" if math.isinf(p) else f"{p:.6f}"


# ---------------------------------------------------------------------------
# verify


def _verify_gradcheck(seed: int, nets: int = 5) -> list[tuple[str, bool, str]]:
    results = []
    rng = np.random.default_rng(seed)
    for i in range(nets):
        blocks = int(rng.integers(1, 4))
        hidden = int(rng.integers(2, 5))
        spec = networks.SubnetSpec(f"check{i}", blocks, 1, hidden, 1)
        layers = networks.build_subnet(spec, [seed, i])
        x = rng.standard_normal((2, 1, 8, 8))
        target = rng.standard_normal((2, 1, 8, 8))
        res = tensor_nn.grad_check(layers, x, target, n_samples=25, seed=seed + i)
        ok = res.max_rel_error < 1e-4
        results.append(
            (f"gradcheck[{i}] ({blocks} blocks, {hidden} ch)", ok,
             f"max_rel_error={res.max_rel_error:.3e} threshold=1e-4")
        )
    return results


def _verify_blur_identity(seed: int, pairs: int = 10) -> list[tuple[str, bool, str]]:
    kernel = gaussian_kernel(networks.BLUR_SIGMA, networks.BLUR_SIDE)
    rng = np.random.default_rng(seed)
    results = []
    for i in range(pairs):
        a = rng.random((48, 48))
        b = (rng.random((48, 48)) > 0.5).astype(np.float64)
        lhs = convolve_same(a - b, kernel)
        rhs = convolve_same(a, kernel) - convolve_same(b, kernel)
        gap = float(np.abs(lhs - rhs).max())
        results.append(
            (f"blur-distributivity[{i}]", gap <= 1e-10,
             f"max_abs_gap={gap:.3e} threshold=1e-10")
        )
    return results


def _verify_narrowing(images_dir: str) -> list[tuple[str, bool, str]]:
    paths = _list_images(Path(images_dir))
    if not paths:
        raise ValueError(f"no .pgm or .ppm images found in {images_dir}")
    kernel = gaussian_kernel(networks.BLUR_SIGMA, networks.BLUR_SIDE)
    results = []
    for p in paths:
        img = load_image(p)
        gray = to_grayscale(img) if img.ndim == 3 else img
        half = floyd_steinberg(gray)
        rep = residual_histogram(gray, half, kernel)
        ok = (
            rep.blurred_stats.std < rep.additive_stats.std
            and rep.blurred_stats.width99 < rep.additive_stats.width99
        )
        ratio = rep.blurred_stats.std / max(rep.additive_stats.std, 1e-12)
        results.append(
            (f"narrowing[{p.name}]", ok,
             f"std_ratio={ratio:.4f} width99 {rep.blurred_stats.width99:.4f} "
             f"vs {rep.additive_stats.width99:.4f}")
        )
    return results


def _cmd_verify(args) -> int:
    run_all = not (args.gradcheck or args.gcm_identity or args.narrowing)
    checks: list[tuple[str, bool, str]] = []
    if args.gradcheck or run_all:
        checks += _verify_gradcheck(args.seed)
    if args.gcm_identity or run_all:
        checks += _verify_blur_identity(args.seed)
    if args.narrowing:
        checks += _verify_narrowing(args.narrowing)
    failed = 0
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += 0 if ok else 1
    print(f"{len(checks) - failed}/{len(checks)} properties passed")
    return EXIT_PROPERTY if failed else EXIT_OK


# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="unhalftone",
                     description="Inverse halftoning by layer decomposition.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("halftone", parents=[], help="Floyd-Steinberg halftone a PGM")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_halftone)

    p = sub.add_parser("dataset", help="cut aligned training triplets from a corpus")
    p.add_argument("corpus_dir")
    p.add_argument("out_dir")
    p.add_argument("--patches", type=int, required=True, help="total triplets to cut")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-size", type=int, default=32)
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--resume", help="bundle directory to continue from")
    p.add_argument("--val-data", help="validation dataset directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--variant", choices=("layered", "direct", "residual"),
                   default="layered",
                   help="train the full model or a 2-channel baseline")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="reconstruct a continuous-tone image")
    p.add_argument("model_dir")
    p.add_argument("input", help="halftoned PGM, or PPM for per-plane color")
    p.add_argument("output")
    p.add_argument("--emit-layers", action="store_true",
                   help="also write base, detail, and Laplacian maps")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM table for an image-pair manifest")
    p.add_argument("manifest", help="CSV with name,image,reference columns")
    p.add_argument("--out", help="report CSV path (default stdout)")
    p.add_argument("--psnr-mode", choices=("merged", "planes"), default="merged")
    p.add_argument("--ssim-mode", choices=("luma", "planes"), default="luma")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("verify", help="run the property suite")
    p.add_argument("--gradcheck", action="store_true")
    p.add_argument("--gcm-identity", action="store_true",
                   help="blur distributivity of the residual identity")
    p.add_argument("--narrowing", metavar="IMAGES_DIR",
                   help="residual narrowing on every image in the directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)

    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else EXIT_USAGE
    _echo_config(args)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ImageFormatError, UntrainedModelError, FileNotFoundError,
            NotADirectoryError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    raise SystemExit(main())

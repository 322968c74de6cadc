"""Dataset construction and the three-stage training protocol.

A training sample is an aligned triplet of 32x32 patches cut from one
source image: the grayscale original, its Laplacian map, and its
halftone. Halftoning and Laplacian filtering run on the whole image
before cropping so patch borders see the true neighborhood.

Stages:

1. base residual net: blurred halftone patch -> blurred difference
   target (original - halftone, then blurred); the net is frozen
   afterwards.
2. initial reconstruction net: raw halftone patch -> original patch.
3. joint: the structure head predicts the Laplacian map from the initial
   reconstruction, the detail net predicts the detail layer from (base,
   predicted laplacian, halftone); the loss is a weighted sum of both
   squared-l2 terms and gradients flow through the head into the
   reconstruction net, never into the frozen base net.

Losses follow the batch-averaged squared l2 convention of
:func:`unhalftone.tensor_nn.l2_loss`. The learning rate is a staircase
from ``lr_start`` down to ``lr_end``, stepping every ``lr_step_epochs``.
All randomness flows from the config seed; single-threaded runs are
bitwise reproducible.

Full-scale defaults mirror the training protocol this model ships with
(16-block subnets, 64 channels, 200 epochs x 1000 iterations, batch 64,
lr 1e-5 down to 1e-6 every 50 epochs). ``TrainConfig.desk_scale`` is the
small configuration used by the test suite.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, fields, replace

import numpy as np

from . import networks, tensor_nn
from .filters import convolve_same, laplacian_map
from .halftone import floyd_steinberg
from .imagecore import _require_gray, load_pgm, save_pgm, to_grayscale
from .networks import ModelBundle
from .tensor_nn import ConvParams, GradBundle


class NumericError(RuntimeError):
    """Training hit a NaN or infinity; the message names the culprit."""


@dataclass
class SampleTriplet:
    """Aligned 32x32 patches plus their provenance."""

    original: np.ndarray
    laplacian: np.ndarray
    halftone: np.ndarray
    source_id: str
    offset: tuple[int, int]


@dataclass
class TrainConfig:
    epochs: int = 200
    iters_per_epoch: int = 1000
    batch_size: int = 64
    lr_start: float = 1e-5
    lr_end: float = 1e-6
    lr_step_epochs: int = 50
    seed: int = 0
    stage: int = 1
    blocks: int = networks.FULL_BLOCKS
    head_blocks: int = networks.FULL_HEAD_BLOCKS
    hidden_channels: int = networks.FULL_HIDDEN
    momentum: float = 0.0
    optimizer: str = "sgd"
    precision: str = "float32"
    stop_loss: float = 0.0
    detail_weight: float = 1.0
    structure_weight: float = 1.0
    blur_sigma: float = networks.BLUR_SIGMA
    blur_side: int = networks.BLUR_SIDE
    patch_size: int = 32

    def __post_init__(self):
        for name in ("epochs", "iters_per_epoch", "batch_size", "lr_step_epochs",
                     "blocks", "head_blocks", "hidden_channels", "patch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not (self.lr_start >= self.lr_end > 0):
            raise ValueError("need lr_start >= lr_end > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainConfig":
        """Small configuration sized for CPU test runs."""
        base = dict(
            epochs=4,
            iters_per_epoch=500,
            batch_size=16,
            lr_start=2e-3,
            lr_end=5e-4,
            lr_step_epochs=1,
            blocks=3,
            head_blocks=2,
            hidden_channels=16,
        )
        base.update(overrides)
        return cls(**base)


_INT_FIELDS = {"epochs", "iters_per_epoch", "batch_size", "lr_step_epochs", "seed",
               "stage", "blocks", "head_blocks", "hidden_channels", "blur_side",
               "patch_size"}
_STR_FIELDS = {"optimizer", "precision"}


def save_config(cfg: TrainConfig, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for f in fields(TrainConfig):
            fh.write(f"{f.name} = {getattr(cfg, f.name)!r}\n")


def parse_config(path, base: TrainConfig | None = None) -> TrainConfig:
    """Read ``key = value`` lines over ``base`` (default full-scale config)."""
    cfg = base if base is not None else TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    updates = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key or not value:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in _STR_FIELDS:
                updates[key] = value.strip("'\"")
            else:
                updates[key] = int(value) if key in _INT_FIELDS else float(value)
    return replace(cfg, **updates)


# ---------------------------------------------------------------------------
# Dataset construction


def build_dataset(
    images: list[np.ndarray],
    patch_size: int = 32,
    patches_per_image: int = 16,
    seed: int = 0,
) -> list[SampleTriplet]:
    """Cut aligned (original, laplacian, halftone) patches from each image.

    Color images are converted to grayscale first; halftone and Laplacian
    maps are computed on the whole image, then all three are cropped at
    the same uniformly random in-bounds offsets. Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    triplets = []
    for idx, img in enumerate(images):
        img = np.asarray(img, dtype=np.float64)
        gray = to_grayscale(img) if img.ndim == 3 else _require_gray(img)
        h, w = gray.shape
        if h < patch_size or w < patch_size:
            raise ValueError(
                f"image {idx} is {h}x{w}, smaller than patch size {patch_size}"
            )
        half = floyd_steinberg(gray)
        lap = laplacian_map(gray)
        for _ in range(patches_per_image):
            i = int(rng.integers(0, h - patch_size + 1))
            j = int(rng.integers(0, w - patch_size + 1))
            sl = (slice(i, i + patch_size), slice(j, j + patch_size))
            triplets.append(
                SampleTriplet(
                    original=gray[sl].copy(),
                    laplacian=lap[sl].copy(),
                    halftone=half[sl].copy(),
                    source_id=f"img{idx:04d}",
                    offset=(i, j),
                )
            )
    return triplets


def base_residual_target(triplet: SampleTriplet, blur_kernel: np.ndarray) -> np.ndarray:
    """Training target for the base residual net: (original - halftone)
    blurred by the Gaussian kernel. Signed output."""
    return convolve_same(triplet.original - triplet.halftone, blur_kernel)


def save_triplets(dirpath, triplets: list[SampleTriplet]) -> None:
    """Write each triplet as three PGMs plus a manifest CSV.

    Laplacian patches are stored offset-encoded as (v + 1) / 2 because PGM
    cannot hold negatives; the manifest records the encoding. Values
    outside [-1, 1] (possible on extreme edges) clip under this encoding.
    """
    import pathlib

    d = pathlib.Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for n, t in enumerate(triplets):
        names = {
            "original": f"{n:05d}_original.pgm",
            "halftone": f"{n:05d}_halftone.pgm",
            "laplacian": f"{n:05d}_laplacian.pgm",
        }
        save_pgm(t.original, d / names["original"])
        save_pgm(t.halftone, d / names["halftone"])
        save_pgm((t.laplacian + 1.0) / 2.0, d / names["laplacian"])
        rows.append(
            [n, t.source_id, t.offset[0], t.offset[1],
             names["original"], names["halftone"], names["laplacian"],
             "offset:(v+1)/2"]
        )
    with open(d / "manifest.csv", "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["index", "source_id", "row", "col",
             "original", "halftone", "laplacian", "laplacian_encoding"]
        )
        writer.writerows(rows)


def load_triplets(dirpath) -> list[SampleTriplet]:
    import pathlib

    d = pathlib.Path(dirpath)
    manifest = d / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no dataset manifest at {manifest}")
    triplets = []
    with open(manifest, newline="", encoding="ascii") as fh:
        for row in csv.DictReader(fh):
            lap = load_pgm(d / row["laplacian"]) * 2.0 - 1.0
            triplets.append(
                SampleTriplet(
                    original=load_pgm(d / row["original"]),
                    laplacian=lap,
                    halftone=load_pgm(d / row["halftone"]),
                    source_id=row["source_id"],
                    offset=(int(row["row"]), int(row["col"])),
                )
            )
    return triplets


# ---------------------------------------------------------------------------
# Learning-rate schedule


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Staircase decay: drop every ``lr_step_epochs`` so the run starts at
    ``lr_start`` and its final step sits at ``lr_end``."""
    n_steps = cfg.epochs / cfg.lr_step_epochs - 1.0
    if n_steps <= 0:
        return cfg.lr_start
    level = cfg.lr_start - (cfg.lr_start - cfg.lr_end) * (epoch // cfg.lr_step_epochs) / n_steps
    return float(min(max(level, cfg.lr_end), cfg.lr_start))


# ---------------------------------------------------------------------------
# Training loops


class TrainLog:
    """CSV writer for per-epoch rows; also keeps them in memory."""

    COLUMNS = ["epoch", "iter", "stage", "loss_total", "loss_detail",
               "loss_laplacian", "lr", "wallclock_ms"]

    def __init__(self, path=None):
        self.rows: list[dict] = []
        self._fh = open(path, "w", newline="", encoding="ascii") if path else None
        self._writer = None
        if self._fh:
            self._writer = csv.DictWriter(self._fh, fieldnames=self.COLUMNS)
            self._writer.writeheader()

    def add(self, **row) -> None:
        full = {c: row.get(c, "") for c in self.COLUMNS}
        self.rows.append(full)
        if self._writer:
            self._writer.writerow(full)
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def _tensor_batch(patches: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return patches[idx]


def _stack_patches(arrays: list[np.ndarray], dtype=np.float32) -> np.ndarray:
    return np.stack(arrays)[:, None].astype(dtype)


def _make_stepper(cfg: TrainConfig):
    """Optimizer closure: step(layers, grads, lr), state kept inside."""
    if cfg.optimizer == "adam":
        state = {"adam": None}

        def step(layers, grads, lr):
            state["adam"] = tensor_nn.adam_step(layers, grads, lr, state["adam"])

    else:
        state = {"velocity": None}

        def step(layers, grads, lr):
            state["velocity"] = tensor_nn.sgd_step(
                layers, grads, lr, cfg.momentum, state["velocity"]
            )

    return step


def _check_finite(loss: float, grads: list[GradBundle], stage: str, it: int) -> None:
    if not np.isfinite(loss):
        raise NumericError(f"{stage}: loss became {loss} at iteration {it}")
    for li, g in enumerate(grads):
        if not (np.all(np.isfinite(g.d_weights)) and np.all(np.isfinite(g.d_bias))):
            raise NumericError(
                f"{stage}: non-finite gradient in conv layer {li} at iteration {it}"
            )


def _fit_stack(
    layers: list[ConvParams],
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    stage_label: str,
    log: TrainLog,
    epoch_offset: int = 0,
    val: tuple[np.ndarray, np.ndarray] | None = None,
) -> list[ConvParams]:
    """Generic single-stack regression loop used by stages 1, 2 and the
    baselines. Returns the best-validation parameters when ``val`` is
    given, otherwise the final parameters (updated in place). A positive
    ``cfg.stop_loss`` ends the run early once a batch loss falls below it."""
    rng = np.random.default_rng(cfg.seed)
    n = inputs.shape[0]
    step = _make_stepper(cfg)
    best_val = np.inf
    best_params = None
    seen = 0
    stopped = False
    for epoch in range(epoch_offset, epoch_offset + cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        t0 = time.perf_counter()
        total = 0.0
        done = 0
        for it in range(cfg.iters_per_epoch):
            idx = rng.integers(0, n, cfg.batch_size)
            x = _tensor_batch(inputs, idx)
            t = _tensor_batch(targets, idx)
            out, cache = tensor_nn.stack_forward(layers, x)
            loss, grad = tensor_nn.l2_loss(out, t)
            total += loss
            done += 1
            if cfg.stop_loss > 0.0 and loss < cfg.stop_loss:
                stopped = True
                break
            _, grads = tensor_nn.stack_backward(layers, cache, grad)
            _check_finite(loss, grads, stage_label, seen + it)
            step(layers, grads, lr)
        seen += done
        ms = (time.perf_counter() - t0) * 1000.0
        log.add(epoch=epoch, iter=seen, stage=stage_label,
                loss_total=f"{total / done:.8g}",
                lr=f"{lr:.6g}", wallclock_ms=f"{ms:.1f}")
        if val is not None:
            out, _ = tensor_nn.stack_forward(layers, val[0])
            vloss, _ = tensor_nn.l2_loss(out, val[1])
            log.add(epoch=epoch, iter=seen, stage=f"{stage_label}-val",
                    loss_total=f"{vloss:.8g}", lr=f"{lr:.6g}")
            if vloss < best_val:
                best_val = vloss
                best_params = tensor_nn.stack_copy(layers)
        if stopped:
            break
    if val is not None and best_params is not None:
        for p, b in zip(layers, best_params):
            p.weights[...] = b.weights
            p.bias[...] = b.bias
    return layers


def _blurred_halftones(triplets, kernel, dtype=np.float32) -> np.ndarray:
    return _stack_patches([convolve_same(t.halftone, kernel) for t in triplets], dtype)


def _cast_net(bundle: ModelBundle, attr: str, cfg: TrainConfig) -> list[ConvParams]:
    """Fetch a subnet, converting it in place to the training precision."""
    net = bundle.require(attr)
    if net[0].weights.dtype != cfg.dtype:
        net = tensor_nn.stack_astype(net, cfg.dtype)
        setattr(bundle, attr, net)
    return net


def train_stage1(
    triplets: list[SampleTriplet],
    cfg: TrainConfig,
    bundle: ModelBundle,
    log_path=None,
    val_triplets: list[SampleTriplet] | None = None,
    epoch_offset: int = 0,
) -> TrainLog:
    """Fit the base residual net on blurred-difference targets, then
    freeze it (callers must not update it afterwards)."""
    net = _cast_net(bundle, "base_net", cfg)
    inputs = _blurred_halftones(triplets, bundle.blur_kernel, cfg.dtype)
    targets = _stack_patches(
        [base_residual_target(t, bundle.blur_kernel) for t in triplets], cfg.dtype
    )
    val = None
    if val_triplets:
        val = (
            _blurred_halftones(val_triplets, bundle.blur_kernel, cfg.dtype),
            _stack_patches(
                [base_residual_target(t, bundle.blur_kernel) for t in val_triplets],
                cfg.dtype,
            ),
        )
    log = TrainLog(log_path)
    try:
        _fit_stack(net, inputs, targets, cfg, "1", log, epoch_offset, val)
    finally:
        log.close()
    bundle.stage_done = max(bundle.stage_done, 1)
    bundle.epochs_trained[1] = epoch_offset + cfg.epochs
    return log


def train_stage2(
    triplets: list[SampleTriplet],
    cfg: TrainConfig,
    bundle: ModelBundle,
    log_path=None,
    val_triplets: list[SampleTriplet] | None = None,
    epoch_offset: int = 0,
) -> TrainLog:
    """Pretrain the initial reconstruction net: halftone -> original."""
    if bundle.stage_done < 1:
        raise ValueError("stage 2 needs a stage-1 bundle (base net untrained)")
    net = _cast_net(bundle, "recon_net", cfg)
    inputs = _stack_patches([t.halftone for t in triplets], cfg.dtype)
    targets = _stack_patches([t.original for t in triplets], cfg.dtype)
    val = None
    if val_triplets:
        val = (
            _stack_patches([t.halftone for t in val_triplets], cfg.dtype),
            _stack_patches([t.original for t in val_triplets], cfg.dtype),
        )
    log = TrainLog(log_path)
    try:
        _fit_stack(net, inputs, targets, cfg, "2", log, epoch_offset, val)
    finally:
        log.close()
    bundle.stage_done = max(bundle.stage_done, 2)
    bundle.epochs_trained[2] = epoch_offset + cfg.epochs
    return log


def _frozen_base_batch(
    bundle: ModelBundle, blurred: np.ndarray, idx: np.ndarray
) -> np.ndarray:
    """Recompute base layers for a batch with the frozen net (no grads)."""
    xb = blurred[idx]
    residual, _ = tensor_nn.stack_forward(bundle.base_net, xb)
    return residual + xb


def train_stage3(
    triplets: list[SampleTriplet],
    cfg: TrainConfig,
    bundle: ModelBundle,
    log_path=None,
    epoch_offset: int = 0,
) -> TrainLog:
    """Jointly train detail net, structure head, and reconstruction net.

    Per batch: base layers come from the frozen base net; the detail
    target is original - base (so the detail net learns to undo base
    prediction error too); the Laplacian target comes from the triplet.
    Loss = detail_weight * l2(detail) + structure_weight * l2(laplacian).
    Gradients flow through the predicted Laplacian into the head and the
    reconstruction net, and never into the base net (hash-checked every
    epoch).
    """
    if bundle.stage_done < 2:
        raise ValueError("stage 3 needs a stage-2 bundle (recon net untrained)")
    base_net = bundle.require("base_net")
    recon_net = _cast_net(bundle, "recon_net", cfg)
    head = _cast_net(bundle, "structure_head", cfg)
    detail_net = _cast_net(bundle, "detail_net", cfg)

    frozen_hash = hashlib.sha256(tensor_nn.stack_bytes(base_net)).hexdigest()
    halftones = _stack_patches([t.halftone for t in triplets], cfg.dtype)
    blurred = _blurred_halftones(triplets, bundle.blur_kernel, cfg.dtype)
    originals = _stack_patches([t.original for t in triplets], cfg.dtype)
    laplacians = _stack_patches([t.laplacian for t in triplets], cfg.dtype)

    w1 = cfg.dtype(cfg.detail_weight)
    w2 = cfg.dtype(cfg.structure_weight)
    rng = np.random.default_rng(cfg.seed)
    n = len(triplets)
    trained = recon_net + head + detail_net
    step = _make_stepper(cfg)
    log = TrainLog(log_path)
    seen = 0
    try:
        for epoch in range(epoch_offset, epoch_offset + cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            t0 = time.perf_counter()
            tot = tot_d = tot_l = 0.0
            for it in range(cfg.iters_per_epoch):
                idx = rng.integers(0, n, cfg.batch_size)
                half = halftones[idx]
                base = _frozen_base_batch(bundle, blurred, idx)
                detail_target = originals[idx] - base
                # consistency: target + base must reassemble the original
                # (up to one rounding of the training dtype)
                assert float(np.abs((detail_target + base) - originals[idx]).max()) \
                    <= 4.0 * np.finfo(cfg.dtype).eps * 2.0

                recon, cache_r = tensor_nn.stack_forward(recon_net, half)
                lap, cache_h = tensor_nn.stack_forward(head, recon)
                x_detail = tensor_nn.concat_channels([base, lap, half])
                detail, cache_d = tensor_nn.stack_forward(detail_net, x_detail)

                loss_d, grad_d = tensor_nn.l2_loss(detail, detail_target)
                loss_l, grad_l = tensor_nn.l2_loss(lap, laplacians[idx])
                loss = float(w1) * loss_d + float(w2) * loss_l

                gx_detail, grads_d = tensor_nn.stack_backward(
                    detail_net, cache_d, w1 * grad_d
                )
                _, g_lap_from_detail, _ = tensor_nn.split_channels(gx_detail, [1, 1, 1])
                grad_lap = w2 * grad_l + g_lap_from_detail
                gx_head, grads_h = tensor_nn.stack_backward(head, cache_h, grad_lap)
                _, grads_r = tensor_nn.stack_backward(recon_net, cache_r, gx_head)

                grads = grads_r + grads_h + grads_d
                _check_finite(loss, grads, "3", seen + it)
                step(trained, grads, lr)
                tot += loss
                tot_d += loss_d
                tot_l += loss_l
            seen += cfg.iters_per_epoch
            now_hash = hashlib.sha256(tensor_nn.stack_bytes(base_net)).hexdigest()
            if now_hash != frozen_hash:
                raise RuntimeError("freeze contract violated: base net changed")
            ms = (time.perf_counter() - t0) * 1000.0
            k = cfg.iters_per_epoch
            log.add(epoch=epoch, iter=seen, stage="3",
                    loss_total=f"{tot / k:.8g}", loss_detail=f"{tot_d / k:.8g}",
                    loss_laplacian=f"{tot_l / k:.8g}", lr=f"{lr:.6g}",
                    wallclock_ms=f"{ms:.1f}")
    finally:
        log.close()
    bundle.stage_done = max(bundle.stage_done, 3)
    bundle.epochs_trained[3] = epoch_offset + cfg.epochs
    return log


def train_baseline(
    kind: str,
    triplets: list[SampleTriplet],
    cfg: TrainConfig,
    bundle: ModelBundle,
    log_path=None,
) -> tuple[list[ConvParams], TrainLog]:
    """Train a 2-channel baseline on the frozen stage-1 base layers.

    ``direct`` regresses the original image; ``residual`` regresses
    original - base and adds it back at inference. Returns the trained
    parameters and the log.
    """
    if bundle.stage_done < 1:
        raise ValueError(f"baseline {kind!r} needs a stage-1 bundle")
    spec = networks.baseline_spec(kind, cfg.blocks, cfg.hidden_channels)
    params = tensor_nn.stack_astype(networks.build_subnet(spec, [cfg.seed, 9]), cfg.dtype)
    halftones = _stack_patches([t.halftone for t in triplets], cfg.dtype)
    blurred = _blurred_halftones(triplets, bundle.blur_kernel, cfg.dtype)
    originals = _stack_patches([t.original for t in triplets], cfg.dtype)

    all_idx = np.arange(len(triplets))
    base_all = _frozen_base_batch(bundle, blurred, all_idx)
    inputs = tensor_nn.concat_channels([base_all, halftones])
    targets = originals if kind == "direct" else originals - base_all

    log = TrainLog(log_path)
    try:
        _fit_stack(params, inputs, targets, cfg, f"baseline-{kind}", log)
    finally:
        log.close()
    return params, log

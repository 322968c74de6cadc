"""Subnetwork architectures, inference pipelines, and bundle checkpoints.

The reconstruction model is three conv+ReLU stacks around a frozen 5x5
Gaussian blur (sigma 1):

- ``base_residual`` maps the blurred halftone to the signed residual that
  turns it into the base layer (the blurred continuous-tone estimate);
- ``initial_recon`` plus ``structure_head`` form the structure map
  predictor: a first continuous-tone estimate from the raw halftone,
  then a predicted Laplacian map from that estimate;
- ``detail`` consumes (base, laplacian, halftone) stacked channelwise, in
  that fixed order, and emits the signed detail layer.

The final image is clamp01(base + detail). Channel plan per stack: input
conv c=input channels, m=hidden; middle convs hidden to hidden; last conv
hidden to output with no ReLU so signed values survive.

Two 2-channel baselines reuse the frozen stage-1 base layer: ``direct``
predicts the output image from (base, halftone) in one shot, and
``residual`` predicts a correction that is added onto the base layer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor_nn
from .filters import gaussian_kernel, convolve_same
from .imagecore import _require_gray, clamp01, merge_planes, split_planes
from .tensor_nn import ConvParams

FULL_BLOCKS = 16
FULL_HEAD_BLOCKS = 6
FULL_HIDDEN = 64
BLUR_SIGMA = 1.0
BLUR_SIDE = 5

BASELINE_KINDS = ("direct", "residual")


class UntrainedModelError(RuntimeError):
    """A predict operation needs a subnetwork that is missing or untrained."""


@dataclass(frozen=True)
class SubnetSpec:
    """Shape description of one conv+ReLU stack."""

    name: str
    blocks: int
    in_channels: int
    hidden_channels: int = FULL_HIDDEN
    out_channels: int = 1

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError(f"blocks must be >= 1, got {self.blocks}")
        if min(self.in_channels, self.hidden_channels, self.out_channels) < 1:
            raise ValueError("channel counts must be positive")

    def layer_channels(self) -> list[tuple[int, int]]:
        """(in, out) channel pairs for every conv layer, input to output."""
        if self.blocks == 1:
            return [(self.in_channels, self.out_channels)]
        pairs = [(self.in_channels, self.hidden_channels)]
        pairs += [(self.hidden_channels, self.hidden_channels)] * (self.blocks - 2)
        pairs.append((self.hidden_channels, self.out_channels))
        return pairs


def base_residual_spec(blocks: int = FULL_BLOCKS, hidden: int = FULL_HIDDEN) -> SubnetSpec:
    return SubnetSpec("base_residual", blocks, 1, hidden, 1)


def initial_recon_spec(blocks: int = FULL_BLOCKS, hidden: int = FULL_HIDDEN) -> SubnetSpec:
    return SubnetSpec("initial_recon", blocks, 1, hidden, 1)


def structure_head_spec(blocks: int = FULL_HEAD_BLOCKS, hidden: int = FULL_HIDDEN) -> SubnetSpec:
    return SubnetSpec("structure_head", blocks, 1, hidden, 1)


def detail_spec(blocks: int = FULL_BLOCKS, hidden: int = FULL_HIDDEN) -> SubnetSpec:
    return SubnetSpec("detail", blocks, 3, hidden, 1)


def baseline_spec(kind: str, blocks: int = FULL_BLOCKS, hidden: int = FULL_HIDDEN) -> SubnetSpec:
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}, expected {BASELINE_KINDS}")
    return SubnetSpec(f"baseline_{kind}", blocks, 2, hidden, 1)


def build_subnet(spec: SubnetSpec, seed) -> list[ConvParams]:
    """Initialize a stack: weights uniform(-b, b) with b = sqrt(6 / (fan_in
    + fan_out)), biases zero, float32. Equal seeds give equal parameters."""
    rng = np.random.default_rng(seed)
    k = tensor_nn.KERNEL_SIDE
    layers = []
    for c, m in spec.layer_channels():
        bound = np.sqrt(6.0 / (c * k * k + m * k * k))
        weights = rng.uniform(-bound, bound, size=(m, c, k, k)).astype(np.float32)
        bias = np.zeros(m, dtype=np.float32)
        layers.append(ConvParams(weights, bias))
    return layers


def zero_subnet(spec: SubnetSpec) -> list[ConvParams]:
    """All-zero parameters; reduces every pipeline to its analytic skeleton."""
    k = tensor_nn.KERNEL_SIDE
    return [
        ConvParams(np.zeros((m, c, k, k), np.float32), np.zeros(m, np.float32))
        for c, m in spec.layer_channels()
    ]


@dataclass
class ModelBundle:
    """The frozen blur kernel, the four subnetworks, and training metadata."""

    blur_kernel: np.ndarray
    blur_sigma: float = BLUR_SIGMA
    blur_side: int = BLUR_SIDE
    base_net: list[ConvParams] | None = None
    recon_net: list[ConvParams] | None = None
    structure_head: list[ConvParams] | None = None
    detail_net: list[ConvParams] | None = None
    seed: int = 0
    stage_done: int = 0
    epochs_trained: dict[int, int] = field(default_factory=dict)

    def require(self, attr: str) -> list[ConvParams]:
        net = getattr(self, attr)
        if net is None:
            raise UntrainedModelError(f"bundle has no {attr} subnetwork")
        return net


def new_bundle(
    seed: int = 0,
    blocks: int = FULL_BLOCKS,
    head_blocks: int = FULL_HEAD_BLOCKS,
    hidden: int = FULL_HIDDEN,
    blur_sigma: float = BLUR_SIGMA,
    blur_side: int = BLUR_SIDE,
) -> ModelBundle:
    """Fresh bundle with all four subnetworks initialized from ``seed``."""
    return ModelBundle(
        blur_kernel=gaussian_kernel(blur_sigma, blur_side),
        blur_sigma=blur_sigma,
        blur_side=blur_side,
        base_net=build_subnet(base_residual_spec(blocks, hidden), [seed, 0]),
        recon_net=build_subnet(initial_recon_spec(blocks, hidden), [seed, 1]),
        structure_head=build_subnet(structure_head_spec(head_blocks, hidden), [seed, 2]),
        detail_net=build_subnet(detail_spec(blocks, hidden), [seed, 3]),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Inference


def _as_tensor(img: np.ndarray, dtype) -> np.ndarray:
    return np.ascontiguousarray(img, dtype=dtype)[None, None]


def _net_dtype(net: list[ConvParams]):
    return net[0].weights.dtype


def _run(net: list[ConvParams], img: np.ndarray) -> np.ndarray:
    out, _ = tensor_nn.stack_forward(net, _as_tensor(img, _net_dtype(net)))
    return out[0, 0].astype(np.float64)


def predict_base(halftone: np.ndarray, bundle: ModelBundle) -> tuple[np.ndarray, np.ndarray]:
    """Blur the halftone, predict its residual, and add them.

    Returns (base, residual). The base layer approximates the blurred
    continuous-tone image and is intentionally not clamped.
    """
    halftone = _require_gray(halftone, "halftone")
    net = bundle.require("base_net")
    blurred = convolve_same(halftone, bundle.blur_kernel)
    residual = _run(net, blurred)
    return residual + blurred, residual


def predict_structure_map(
    halftone: np.ndarray, bundle: ModelBundle
) -> tuple[np.ndarray, np.ndarray]:
    """Predict the Laplacian structure map via the initial reconstruction.

    Returns (laplacian, initial_recon); the map is signed.
    """
    halftone = _require_gray(halftone, "halftone")
    recon_net = bundle.require("recon_net")
    head = bundle.require("structure_head")
    recon = _run(recon_net, halftone)
    laplacian = _run(head, recon)
    return laplacian, recon


def predict_detail(
    base: np.ndarray,
    laplacian: np.ndarray,
    halftone: np.ndarray,
    bundle: ModelBundle,
) -> np.ndarray:
    """Predict the signed detail layer from (base, laplacian, halftone)."""
    base = _require_gray(base, "base")
    laplacian = _require_gray(laplacian, "laplacian")
    halftone = _require_gray(halftone, "halftone")
    if not (base.shape == laplacian.shape == halftone.shape):
        raise ValueError(
            f"input sizes differ: {base.shape}, {laplacian.shape}, {halftone.shape}"
        )
    net = bundle.require("detail_net")
    dtype = _net_dtype(net)
    x = tensor_nn.concat_channels(
        [_as_tensor(base, dtype), _as_tensor(laplacian, dtype), _as_tensor(halftone, dtype)]
    )
    out, _ = tensor_nn.stack_forward(net, x)
    return out[0, 0].astype(np.float64)


def reconstruct(halftone: np.ndarray, bundle: ModelBundle) -> np.ndarray:
    """Full pipeline: clamp01(base + detail). Pure composition, no hidden state."""
    base, _ = predict_base(halftone, bundle)
    laplacian, _ = predict_structure_map(halftone, bundle)
    detail = predict_detail(base, laplacian, halftone, bundle)
    return clamp01(base + detail)


def reconstruct_color(color_halftone: np.ndarray, bundle: ModelBundle) -> np.ndarray:
    """Reconstruct each R, G, B plane independently and merge.

    Each plane is clamped by :func:`reconstruct` before merging.
    """
    planes = split_planes(color_halftone)
    return merge_planes(*(reconstruct(p, bundle) for p in planes))


def predict_baseline(
    kind: str, params: list[ConvParams], base: np.ndarray, halftone: np.ndarray
) -> np.ndarray:
    """Run a 2-channel baseline on (base, halftone).

    ``direct`` returns the network output as the image; ``residual``
    returns base + output.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}, expected {BASELINE_KINDS}")
    base = _require_gray(base, "base")
    halftone = _require_gray(halftone, "halftone")
    if base.shape != halftone.shape:
        raise ValueError(f"input sizes differ: {base.shape}, {halftone.shape}")
    dtype = _net_dtype(params)
    x = tensor_nn.concat_channels([_as_tensor(base, dtype), _as_tensor(halftone, dtype)])
    out, _ = tensor_nn.stack_forward(params, x)
    out2d = out[0, 0].astype(np.float64)
    return base + out2d if kind == "residual" else out2d


# ---------------------------------------------------------------------------
# Bundle checkpoints: per-subnet binary files plus a text manifest.

_SUBNET_ATTRS = ("base_net", "recon_net", "structure_head", "detail_net")
MANIFEST_NAME = "manifest.txt"


def save_bundle(dirpath, bundle: ModelBundle) -> None:
    import pathlib

    d = pathlib.Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    present = [a for a in _SUBNET_ATTRS if getattr(bundle, a) is not None]
    lines = [
        "format = 1",
        f"seed = {bundle.seed}",
        f"stage_done = {bundle.stage_done}",
        f"blur_sigma = {bundle.blur_sigma!r}",
        f"blur_side = {bundle.blur_side}",
        f"subnets = {','.join(present)}",
    ]
    for stage, epochs in sorted(bundle.epochs_trained.items()):
        lines.append(f"epochs_stage{stage} = {epochs}")
    (d / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="ascii")
    for attr in present:
        tensor_nn.save_checkpoint(d / f"{attr}.ckpt", attr, getattr(bundle, attr))


def load_bundle(dirpath) -> ModelBundle:
    import pathlib

    d = pathlib.Path(dirpath)
    manifest = d / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"no bundle manifest at {manifest}")
    fields: dict[str, str] = {}
    for line in manifest.read_text(encoding="ascii").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    if fields.get("format") != "1":
        raise ValueError(f"unsupported bundle format {fields.get('format')!r}")
    sigma = float(fields["blur_sigma"])
    side = int(fields["blur_side"])
    bundle = ModelBundle(
        blur_kernel=gaussian_kernel(sigma, side),
        blur_sigma=sigma,
        blur_side=side,
        seed=int(fields.get("seed", "0")),
        stage_done=int(fields.get("stage_done", "0")),
    )
    for key, value in fields.items():
        m = re.fullmatch(r"epochs_stage(\d+)", key)
        if m:
            bundle.epochs_trained[int(m.group(1))] = int(value)
    present = [s for s in fields.get("subnets", "").split(",") if s]
    for attr in present:
        if attr not in _SUBNET_ATTRS:
            raise ValueError(f"manifest names unknown subnet {attr!r}")
        _, layers = tensor_nn.load_checkpoint(d / f"{attr}.ckpt")
        setattr(bundle, attr, layers)
    return bundle

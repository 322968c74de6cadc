"""Minimal convolutional network engine.

Activations travel as NCHW float arrays ("tensors" below). The only
layer types are 5x5 convolutions with bias (stride 1, zero padding 2 so
spatial size is preserved), ReLU, and channel concatenation; losses are
squared l2 norms averaged over the batch. A "stack" is a list of
:class:`ConvParams` applied as conv+ReLU blocks with no ReLU after the
final convolution, which therefore can emit signed outputs.

Training runs in float32; gradient verification runs the same code in
float64 (see :func:`grad_check`).

Checkpoint format (all little-endian, documented here because it is the
wire format):

    bytes 0..3   magic ``UHCP``
    u32          version (1)
    u16          name length, then that many UTF-8 bytes
    u32          number of conv layers
    per layer:   u32 in_channels, u32 out_channels  (5x5 taps implied)
    per layer:   float32 weights (out, in, 5, 5) C-order, float32 bias (out,)

Round-tripping a float32 stack through save/load is bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels

CHECKPOINT_MAGIC = b"UHCP"
CHECKPOINT_VERSION = 1
KERNEL_SIDE = 5


@dataclass
class ConvParams:
    """Weights (out_channels, in_channels, k, k) and bias (out_channels,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ValueError(f"weights must be (m, c, k, k), got {self.weights.shape}")
        if self.weights.shape[2] % 2 == 0:
            raise ValueError("kernel side must be odd")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} filters"
            )

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def astype(self, dtype) -> "ConvParams":
        return ConvParams(self.weights.astype(dtype), self.bias.astype(dtype))

    def copy(self) -> "ConvParams":
        return ConvParams(self.weights.copy(), self.bias.copy())


@dataclass
class GradBundle:
    """Gradients congruent with one ConvParams."""

    d_weights: np.ndarray
    d_bias: np.ndarray


def _pad_same(x: np.ndarray, k: int) -> np.ndarray:
    p = k // 2
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _check_tensor(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}")
    return x


def conv_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Same-size convolution: out = bias + correlate(zero-padded x, weights)."""
    x = _check_tensor(x, "input")
    if x.shape[1] != p.in_channels:
        raise ValueError(
            f"channel mismatch: input has {x.shape[1]}, layer expects {p.in_channels}"
        )
    dtype = np.result_type(x.dtype, p.weights.dtype)
    x = np.ascontiguousarray(x, dtype=dtype)
    w = np.ascontiguousarray(p.weights, dtype=dtype)
    b = np.ascontiguousarray(p.bias, dtype=dtype)
    return kernels().conv_nchw(_pad_same(x, w.shape[2]), w, b)


def conv_backward(
    x: np.ndarray, p: ConvParams, grad_out: np.ndarray
) -> tuple[np.ndarray, GradBundle]:
    """Exact gradients of :func:`conv_forward` with respect to input and params."""
    x = _check_tensor(x, "input")
    grad_out = _check_tensor(grad_out, "grad_out")
    expected = (x.shape[0], p.out_channels, x.shape[2], x.shape[3])
    if grad_out.shape != expected:
        raise ValueError(f"grad_out shape {grad_out.shape}, expected {expected}")
    dtype = np.result_type(x.dtype, p.weights.dtype, grad_out.dtype)
    x = np.ascontiguousarray(x, dtype=dtype)
    w = np.ascontiguousarray(p.weights, dtype=dtype)
    grad_out = np.ascontiguousarray(grad_out, dtype=dtype)
    k = w.shape[2]

    grad_w, grad_b = kernels().conv_nchw_grad_params(_pad_same(x, k), grad_out)
    # Input gradient is the same correlation with channel-swapped,
    # spatially flipped weights.
    w_t = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    zero_bias = np.zeros(w_t.shape[0], dtype=dtype)
    grad_x = kernels().conv_nchw(_pad_same(grad_out, k), w_t, zero_bias)
    return grad_x, GradBundle(grad_w, grad_b)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(_check_tensor(x), 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Mask the gradient where the pre-activation was <= 0."""
    x = _check_tensor(x)
    grad_out = _check_tensor(grad_out, "grad_out")
    return np.where(x > 0, grad_out, grad_out.dtype.type(0))


def concat_channels(xs: list[np.ndarray]) -> np.ndarray:
    """Concatenate along the channel axis, preserving order."""
    if not xs:
        raise ValueError("concat of an empty list")
    xs = [_check_tensor(x) for x in xs]
    base = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != base[0] or x.shape[2:] != base[2:]:
            raise ValueError("concat inputs must share batch and spatial dims")
    return np.concatenate(xs, axis=1)


def split_channels(grad: np.ndarray, channel_sizes: list[int]) -> list[np.ndarray]:
    """Backward of :func:`concat_channels`: split by the same boundaries."""
    grad = _check_tensor(grad, "grad")
    if sum(channel_sizes) != grad.shape[1]:
        raise ValueError(
            f"channel sizes {channel_sizes} do not sum to {grad.shape[1]}"
        )
    bounds = np.cumsum(channel_sizes)[:-1]
    return [np.ascontiguousarray(g) for g in np.split(grad, bounds, axis=1)]


def l2_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-averaged squared l2 loss.

    loss = (1/M) sum_i ||pred_i - target_i||^2 with M the batch size and
    the norm taken over each sample's full channel x spatial extent;
    grad = (2/M) (pred - target).
    """
    pred = _check_tensor(pred, "pred")
    target = _check_tensor(target, "target")
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    m = pred.shape[0]
    diff = pred - target
    loss = float(np.sum(diff.astype(np.float64) ** 2) / m)
    grad = diff * diff.dtype.type(2.0 / m)
    return loss, grad


def sgd_step(
    layers: list[ConvParams],
    grads: list[GradBundle],
    lr: float,
    momentum: float = 0.0,
    velocity: list[GradBundle] | None = None,
) -> list[GradBundle] | None:
    """In-place SGD update p <- p - lr * g.

    Plain by default; with ``momentum`` > 0 a classical velocity buffer is
    kept (pass the returned list back in on the next step).
    """
    if len(layers) != len(grads):
        raise ValueError("layer/grad count mismatch")
    if momentum == 0.0:
        for p, g in zip(layers, grads):
            p.weights -= p.weights.dtype.type(lr) * g.d_weights
            p.bias -= p.bias.dtype.type(lr) * g.d_bias
        return velocity
    if velocity is None:
        velocity = [
            GradBundle(np.zeros_like(p.weights), np.zeros_like(p.bias))
            for p in layers
        ]
    mu = layers[0].weights.dtype.type(momentum)
    for p, g, v in zip(layers, grads, velocity):
        v.d_weights = mu * v.d_weights + g.d_weights
        v.d_bias = mu * v.d_bias + g.d_bias
        p.weights -= p.weights.dtype.type(lr) * v.d_weights
        p.bias -= p.bias.dtype.type(lr) * v.d_bias
    return velocity


@dataclass
class AdamState:
    step: int
    m: list[GradBundle]
    v: list[GradBundle]


def adam_step(
    layers: list[ConvParams],
    grads: list[GradBundle],
    lr: float,
    state: AdamState | None = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """In-place Adam update with bias correction.

    Kept as an opt-in alternative to plain SGD: the deep-overfit checks
    need its per-parameter scaling to reach very small losses in a
    bounded iteration budget.
    """
    if len(layers) != len(grads):
        raise ValueError("layer/grad count mismatch")
    if state is None:
        state = AdamState(
            0,
            [GradBundle(np.zeros_like(p.weights), np.zeros_like(p.bias)) for p in layers],
            [GradBundle(np.zeros_like(p.weights), np.zeros_like(p.bias)) for p in layers],
        )
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(layers, grads, state.m, state.v):
        for arr, garr, marr, varr in (
            (p.weights, g.d_weights, m.d_weights, v.d_weights),
            (p.bias, g.d_bias, m.d_bias, v.d_bias),
        ):
            marr *= beta1
            marr += (1.0 - beta1) * garr
            varr *= beta2
            varr += (1.0 - beta2) * garr * garr
            arr -= lr * (marr / c1) / (np.sqrt(varr / c2) + eps)
    return state


# ---------------------------------------------------------------------------
# Conv+ReLU stacks


def stack_forward(
    layers: list[ConvParams], x: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run conv+ReLU blocks (no ReLU after the last conv).

    Returns the output and a cache of each convolution's input plus each
    pre-activation, as needed by :func:`stack_backward`.
    """
    cache = []
    out = x
    last = len(layers) - 1
    for idx, p in enumerate(layers):
        cache.append(out)
        out = conv_forward(out, p)
        if idx != last:
            cache.append(out)  # pre-activation for the ReLU mask
            out = relu_forward(out)
    return out, cache


def stack_backward(
    layers: list[ConvParams], cache: list[np.ndarray], grad_out: np.ndarray
) -> tuple[np.ndarray, list[GradBundle]]:
    """Backpropagate through :func:`stack_forward`'s computation."""
    grads: list[GradBundle] = [None] * len(layers)  # type: ignore[list-item]
    grad = grad_out
    pos = len(cache) - 1
    last = len(layers) - 1
    for idx in range(last, -1, -1):
        if idx != last:
            grad = relu_backward(cache[pos], grad)
            pos -= 1
        grad, grads[idx] = conv_backward(cache[pos], layers[idx], grad)
        pos -= 1
    return grad, grads


def stack_astype(layers: list[ConvParams], dtype) -> list[ConvParams]:
    return [p.astype(dtype) for p in layers]


def stack_copy(layers: list[ConvParams]) -> list[ConvParams]:
    return [p.copy() for p in layers]


def stack_bytes(layers: list[ConvParams]) -> bytes:
    """Concatenated raw parameter bytes, for hashing freeze contracts."""
    return b"".join(
        part
        for p in layers
        for part in (p.weights.tobytes(), p.bias.tobytes())
    )


# ---------------------------------------------------------------------------
# Gradient verification


@dataclass
class GradCheckSample:
    layer: int
    kind: str  # "weights" or "bias"
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckResult:
    max_rel_error: float
    samples: list[GradCheckSample] = field(default_factory=list)


def grad_check(
    layers: list[ConvParams],
    x: np.ndarray,
    target: np.ndarray,
    n_samples: int = 40,
    step: float = 1e-5,
    seed: int = 0,
    frozen: tuple[int, ...] = (),
) -> GradCheckResult:
    """Compare analytic stack gradients against central finite differences.

    Everything is recomputed in float64. ``n_samples`` parameter
    coordinates are drawn (seeded) from the non-frozen layers; frozen
    layers never appear in the report. The relative error per coordinate
    is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    layers64 = stack_astype(layers, np.float64)
    x64 = np.asarray(x, dtype=np.float64)
    t64 = np.asarray(target, dtype=np.float64)

    out, cache = stack_forward(layers64, x64)
    _, grad_loss = l2_loss(out, t64)
    _, grads = stack_backward(layers64, cache, grad_loss)

    population = []
    for li, p in enumerate(layers64):
        if li in frozen:
            continue
        population.extend((li, "weights", i) for i in range(p.weights.size))
        population.extend((li, "bias", i) for i in range(p.bias.size))
    if not population:
        raise ValueError("no free parameters to check")
    rng = np.random.default_rng(seed)
    take = min(n_samples, len(population))
    picks = rng.choice(len(population), size=take, replace=False)

    def loss_at() -> float:
        y, _ = stack_forward(layers64, x64)
        return l2_loss(y, t64)[0]

    samples = []
    worst = 0.0
    for pick in picks:
        li, kind, idx = population[int(pick)]
        arr = layers64[li].weights if kind == "weights" else layers64[li].bias
        analytic = float(
            (grads[li].d_weights if kind == "weights" else grads[li].d_bias).flat[idx]
        )
        orig = arr.flat[idx]
        arr.flat[idx] = orig + step
        up = loss_at()
        arr.flat[idx] = orig - step
        down = loss_at()
        arr.flat[idx] = orig
        numeric = (up - down) / (2.0 * step)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        samples.append(GradCheckSample(li, kind, idx, analytic, numeric, rel))
        worst = max(worst, rel)
    return GradCheckResult(worst, samples)


# ---------------------------------------------------------------------------
# Checkpoint I/O


def save_checkpoint(path, name: str, layers: list[ConvParams]) -> None:
    """Write a float32 stack in the format documented in the module docstring."""
    name_bytes = name.encode("utf-8")
    for p in layers:
        if p.weights.dtype != np.float32 or p.bias.dtype != np.float32:
            raise ValueError("checkpoints store float32 parameters only")
        if p.weights.shape[2] != KERNEL_SIDE:
            raise ValueError(f"checkpoint layers must use {KERNEL_SIDE}x{KERNEL_SIDE} taps")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<H", len(name_bytes)))
        fh.write(name_bytes)
        fh.write(struct.pack("<I", len(layers)))
        for p in layers:
            fh.write(struct.pack("<II", p.in_channels, p.out_channels))
        for p in layers:
            fh.write(np.ascontiguousarray(p.weights, "<f4").tobytes())
            fh.write(np.ascontiguousarray(p.bias, "<f4").tobytes())


def load_checkpoint(path) -> tuple[str, list[ConvParams]]:
    """Read back a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        buf = fh.read()

    def take(n: int, pos: int) -> tuple[bytes, int]:
        if pos + n > len(buf):
            raise ValueError("truncated checkpoint")
        return buf[pos : pos + n], pos + n

    raw, pos = take(4, 0)
    if raw != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file (magic {raw!r})")
    raw, pos = take(4, pos)
    version = struct.unpack("<I", raw)[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    raw, pos = take(2, pos)
    (name_len,) = struct.unpack("<H", raw)
    raw, pos = take(name_len, pos)
    name = raw.decode("utf-8")
    raw, pos = take(4, pos)
    (n_layers,) = struct.unpack("<I", raw)
    shapes = []
    for _ in range(n_layers):
        raw, pos = take(8, pos)
        shapes.append(struct.unpack("<II", raw))
    layers = []
    k2 = KERNEL_SIDE * KERNEL_SIDE
    for c, m in shapes:
        raw, pos = take(m * c * k2 * 4, pos)
        weights = np.frombuffer(raw, dtype="<f4").reshape(m, c, KERNEL_SIDE, KERNEL_SIDE)
        raw, pos = take(m * 4, pos)
        bias = np.frombuffer(raw, dtype="<f4")
        layers.append(ConvParams(weights.copy(), bias.copy()))
    return name, layers

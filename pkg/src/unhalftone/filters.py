"""Fixed linear filtering: Gaussian kernels, same-size 2-D convolution,
and Laplacian maps.

All fixed-filter operations replicate edge pixels at the border, which
keeps unit-sum kernels mean-preserving on constant images and avoids the
dark halos zero padding would inject into blurred layers. Convolution is
correlation with the flipped kernel; every kernel used here is symmetric,
so the flip is inert but kept for correctness.
"""

from __future__ import annotations

import numpy as np

from .backend import kernels
from .imagecore import _require_gray

# 4-neighbor discrete Laplacian stencil.
LAPLACIAN_TAPS = np.array(
    [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]], dtype=np.float64
)


def gaussian_kernel(sigma: float, side: int) -> np.ndarray:
    """Unit-sum isotropic Gaussian taps on an odd ``side`` x ``side`` grid.

    taps[i, j] is proportional to exp(-((i-c)^2 + (j-c)^2) / (2 sigma^2))
    with c the center index, normalized so the taps sum to 1.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if side < 1 or side % 2 == 0:
        raise ValueError(f"kernel side must be odd and positive, got {side}")
    c = (side - 1) / 2.0
    ax = np.arange(side, dtype=np.float64) - c
    r2 = ax[:, None] ** 2 + ax[None, :] ** 2
    taps = np.exp(-r2 / (2.0 * sigma * sigma))
    return taps / taps.sum()


def _require_kernel(kernel: np.ndarray) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError(f"kernel must be square, got shape {kernel.shape}")
    if kernel.shape[0] % 2 == 0:
        raise ValueError(f"kernel side must be odd, got {kernel.shape[0]}")
    return kernel


def convolve_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve with edge replication; output matches the input size."""
    img = _require_gray(img)
    kernel = _require_kernel(kernel)
    k = kernel.shape[0]
    if k > img.shape[0] or k > img.shape[1]:
        raise ValueError(
            f"kernel side {k} exceeds image size {img.shape[0]}x{img.shape[1]}"
        )
    pad = k // 2
    padded = np.pad(img, pad, mode="edge")
    flipped = np.ascontiguousarray(kernel[::-1, ::-1])
    return kernels().correlate2d(padded, flipped)


def laplacian_map(img: np.ndarray) -> np.ndarray:
    """4-neighbor Laplacian with replicated borders; output is signed."""
    return convolve_same(img, LAPLACIAN_TAPS)

"""Quality metrics and residual-range analysis.

PSNR is 10 log10(peak^2 / MSE) with an infinity sentinel for identical
images. SSIM follows the reference formulation: an 11x11 Gaussian window
with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1, local statistics
over valid window positions only, averaged into a scalar.

The histogram report contrasts the two residual designs for a halftone:
the plain difference (original - halftone) against the same difference
blurred by the Gaussian kernel. Blurring smooths the dot pattern out of
the residual, so its range narrows; the report quantifies that with the
standard deviation and the central 99%-mass width of each residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .filters import convolve_same, gaussian_kernel
from .imagecore import _require_gray, to_grayscale

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images match."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"size mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _window_means(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # separable valid-mode filtering with the 1-D window along each axis
    rows = sliding_window_view(img, window.size, axis=1) @ window
    return sliding_window_view(rows, window.size, axis=0) @ window


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local structural similarity over valid window positions."""
    a = _require_gray(a, "first image")
    b = _require_gray(b, "second image")
    if a.shape != b.shape:
        raise ValueError(f"size mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(
            f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    # the separable 1-D profile of the unit-sum 2-D Gaussian window
    g = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW)
    win = g.sum(axis=0)

    mu_a = _window_means(a, win)
    mu_b = _window_means(b, win)
    var_a = _window_means(a * a, win) - mu_a * mu_a
    var_b = _window_means(b * b, win) - mu_b * mu_b
    cov = _window_means(a * b, win) - mu_a * mu_b

    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def psnr_color(a: np.ndarray, b: np.ndarray, mode: str = "merged") -> float:
    """Color PSNR: ``merged`` pools the MSE over all three planes,
    ``planes`` averages per-plane PSNR values."""
    if mode == "merged":
        return psnr(a, b)
    if mode == "planes":
        vals = [psnr(a[:, :, i], b[:, :, i]) for i in range(3)]
        return float(np.mean(vals))
    raise ValueError(f"unknown mode {mode!r}")


def ssim_color(a: np.ndarray, b: np.ndarray, mode: str = "luma") -> float:
    """Color SSIM: ``luma`` compares BT.601 luma planes, ``planes``
    averages per-plane SSIM values."""
    if mode == "luma":
        return ssim(to_grayscale(a), to_grayscale(b))
    if mode == "planes":
        vals = [ssim(a[:, :, i], b[:, :, i]) for i in range(3)]
        return float(np.mean(vals))
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Residual-range histogram


@dataclass
class ResidualStats:
    std: float
    min: float
    max: float
    width99: float  # central 99%-mass width (0.5% quantile to 99.5%)


@dataclass
class HistogramReport:
    bin_centers: np.ndarray
    additive_counts: np.ndarray
    blurred_counts: np.ndarray
    additive_stats: ResidualStats
    blurred_stats: ResidualStats


def _stats(values: np.ndarray) -> ResidualStats:
    lo, hi = np.quantile(values, [0.005, 0.995])
    return ResidualStats(
        std=float(values.std()),
        min=float(values.min()),
        max=float(values.max()),
        width99=float(hi - lo),
    )


def residual_histogram(
    original: np.ndarray,
    halftone: np.ndarray,
    blur_kernel: np.ndarray,
    bins: int = 201,
) -> HistogramReport:
    """Histogram both residual designs over [-1, 1].

    The default 201 bins have width 0.01 with one bin centered at zero,
    so the all-zero spike of a degenerate residual stays isolated.
    """
    original = _require_gray(original, "original")
    halftone = _require_gray(halftone, "halftone")
    if original.shape != halftone.shape:
        raise ValueError(f"size mismatch: {original.shape} vs {halftone.shape}")
    additive = original - halftone
    blurred = convolve_same(additive, blur_kernel)
    half_step = 1.0 / (bins - 1)
    edges = np.linspace(-1.0 - half_step, 1.0 + half_step, bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    add_counts, _ = np.histogram(additive, bins=edges)
    blur_counts, _ = np.histogram(blurred, bins=edges)
    return HistogramReport(
        bin_centers=centers,
        additive_counts=add_counts,
        blurred_counts=blur_counts,
        additive_stats=_stats(additive),
        blurred_stats=_stats(blurred),
    )


def write_histogram_csv(report: HistogramReport, path) -> None:
    """CSV rows ``bin_center, additive_count, gcm_count`` plus stats trailer."""
    lines = ["bin_center,additive_count,gcm_count"]
    for center, ac, gc in zip(
        report.bin_centers, report.additive_counts, report.blurred_counts
    ):
        lines.append(f"{center:.6g},{int(ac)},{int(gc)}")
    for label, st in (("additive", report.additive_stats), ("gcm", report.blurred_stats)):
        lines.append(
            f"# stats: {label} std={st.std:.8g} min={st.min:.8g} "
            f"max={st.max:.8g} width99={st.width99:.8g}"
        )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")

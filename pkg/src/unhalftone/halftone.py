"""Floyd-Steinberg error-diffusion halftoning.

Produces the bilevel inputs for the whole reconstruction pipeline. The
scan is plain raster (top to bottom, left to right), the threshold is a
fixed 0.5 with ties going to 1, and quantization error spilling outside
the image is dropped rather than renormalized, matching the classical
formulation.
"""

from __future__ import annotations

import numpy as np

from .backend import kernels
from .imagecore import _require_gray

# (row offset, column offset, weight) applied to the unvisited neighbors.
DIFFUSION_WEIGHTS = (
    (0, 1, 7.0 / 16.0),
    (1, -1, 3.0 / 16.0),
    (1, 0, 5.0 / 16.0),
    (1, 1, 1.0 / 16.0),
)


def floyd_steinberg(img: np.ndarray) -> np.ndarray:
    """Halftone a [0, 1] image to a {0.0, 1.0} raster.

    Deterministic: identical inputs give bitwise-identical outputs, and
    an already bilevel image maps to itself exactly.
    """
    img = _require_gray(img)
    lo, hi = img.min(), img.max()
    if lo < 0.0 or hi > 1.0:
        raise ValueError(
            f"halftone input must lie in [0, 1], got range [{lo:.4g}, {hi:.4g}]"
        )
    work = np.ascontiguousarray(img, dtype=np.float64).copy()
    return kernels().floyd_steinberg(work)

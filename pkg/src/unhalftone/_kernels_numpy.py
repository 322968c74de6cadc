"""Pure-numpy fallbacks for the hot kernels.

Same surface as ``_kernels_numba``. The convolutions go through
``sliding_window_view`` plus ``tensordot`` (BLAS); error diffusion is an
interpreted loop with exactly the numba kernel's arithmetic, so the two
backends produce bitwise-identical halftones.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def floyd_steinberg(work):
    """Error-diffuse ``work`` (mutated scratch copy) to a {0,1} raster."""
    h, w = work.shape
    out = np.zeros((h, w), work.dtype)
    for i in range(h):
        for j in range(w):
            v = work[i, j]
            o = 1.0 if v >= 0.5 else 0.0
            out[i, j] = o
            err = v - o
            if j + 1 < w:
                work[i, j + 1] += err * (7.0 / 16.0)
            if i + 1 < h:
                if j - 1 >= 0:
                    work[i + 1, j - 1] += err * (3.0 / 16.0)
                work[i + 1, j] += err * (5.0 / 16.0)
                if j + 1 < w:
                    work[i + 1, j + 1] += err * (1.0 / 16.0)
    return out


def correlate2d(padded, taps):
    """Valid-mode correlation of a pre-padded image with a square tap grid."""
    k = taps.shape[0]
    win = sliding_window_view(padded, (k, k))
    return np.tensordot(win, taps, axes=([2, 3], [0, 1]))


def conv_nchw(padded, weights, bias):
    """Valid-mode NCHW convolution of a pre-padded batch."""
    k = weights.shape[2]
    win = sliding_window_view(padded, (k, k), axis=(2, 3))  # n,c,h,w,k,k
    out = np.tensordot(win, weights, axes=([1, 4, 5], [1, 2, 3]))  # n,h,w,m
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += bias[None, :, None, None]
    return out


def conv_nchw_grad_params(padded, grad_out):
    """Weight and bias gradients for :func:`conv_nchw`."""
    k = padded.shape[2] - grad_out.shape[2] + 1
    win = sliding_window_view(padded, (k, k), axis=(2, 3))  # n,c,h,w,k,k
    grad_w = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(grad_w), grad_b

"""Numba-jitted hot kernels.

Every ``prange`` here parallelizes over indices whose output slices are
disjoint, and all accumulation happens inside a single index, so results
are bitwise independent of the thread count and schedule. Inner loops
over the fastest axis are written out explicitly so LLVM can vectorize
them. Callers pre-pad inputs; these functions only crunch numbers.
"""

from __future__ import annotations

import os

# Avoid the TBB-version probe warning; workqueue is always available and
# scheduling never affects results (disjoint writes only).
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np
from numba import njit, prange


@njit(cache=True)
def floyd_steinberg(work):
    """Error-diffuse ``work`` (mutated scratch copy) to a {0,1} raster.

    Raster scan, threshold 0.5 with ties to 1, weights 7/16 right,
    3/16 down-left, 5/16 down, 1/16 down-right; error falling outside
    the image is dropped.
    """
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


@njit(cache=True, parallel=True)
def correlate2d(padded, taps):
    """Valid-mode correlation of a pre-padded image with a square tap grid."""
    k = taps.shape[0]
    h = padded.shape[0] - k + 1
    w = padded.shape[1] - k + 1
    out = np.empty((h, w), padded.dtype)
    for i in prange(h):
        row = np.zeros(w, padded.dtype)
        for u in range(k):
            for v in range(k):
                t = taps[u, v]
                src = padded[i + u]
                for j in range(w):
                    row[j] += t * src[j + v]
        out[i] = row
    return out


@njit(cache=True, parallel=True)
def conv_nchw(padded, weights, bias):
    """Valid-mode NCHW convolution of a pre-padded batch.

    padded:  (n, c, h + k - 1, w + k - 1)
    weights: (m, c, k, k), applied as correlation
    bias:    (m,)
    returns  (n, m, h, w)
    """
    n_, c_ = padded.shape[0], padded.shape[1]
    m_, k = weights.shape[0], weights.shape[2]
    h = padded.shape[2] - k + 1
    w = padded.shape[3] - k + 1
    out = np.empty((n_, m_, h, w), padded.dtype)
    for nm in prange(n_ * m_):
        n = nm // m_
        m = nm % m_
        for i in range(h):
            row = np.full(w, bias[m])
            for c in range(c_):
                for u in range(k):
                    for v in range(k):
                        wv = weights[m, c, u, v]
                        src = padded[n, c, i + u]
                        for j in range(w):
                            row[j] += wv * src[j + v]
            out[n, m, i] = row
    return out


@njit(cache=True, parallel=True)
def conv_nchw_grad_params(padded, grad_out):
    """Weight and bias gradients for :func:`conv_nchw`.

    padded:   (n, c, h + k - 1, w + k - 1), the padded forward input
    grad_out: (n, m, h, w)
    returns   (grad_weights (m, c, k, k), grad_bias (m,))
    """
    n_, c_ = padded.shape[0], padded.shape[1]
    m_ = grad_out.shape[1]
    h, w = grad_out.shape[2], grad_out.shape[3]
    k = padded.shape[2] - h + 1
    grad_w = np.empty((m_, c_, k, k), padded.dtype)
    grad_b = np.empty(m_, padded.dtype)
    for m in prange(m_):
        gb = 0.0
        for n in range(n_):
            for i in range(h):
                go = grad_out[n, m, i]
                for j in range(w):
                    gb += go[j]
        grad_b[m] = gb
        for c in range(c_):
            for u in range(k):
                for v in range(k):
                    acc = 0.0
                    for n in range(n_):
                        for i in range(h):
                            src = padded[n, c, i + u]
                            go = grad_out[n, m, i]
                            for j in range(w):
                                acc += src[j + v] * go[j]
                    grad_w[m, c, u, v] = acc
    return grad_w, grad_b

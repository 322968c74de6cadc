"""Seeded procedural test images.

There is no bundled photo corpus, so the tests, the verification CLI
examples, and the toy training runs synthesize continuous-tone content
instead: smooth gradients and blobs for tonal range, plus discs, bars,
and sinusoidal texture for edges and structure. Everything is
deterministic in the seed and stays inside [0.03, 0.97] so halftoning
has headroom at both ends.
"""

from __future__ import annotations

import numpy as np

from .filters import convolve_same, gaussian_kernel


def _coords(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    y = np.linspace(0.0, 1.0, h)[:, None]
    x = np.linspace(0.0, 1.0, w)[None, :]
    return y, x


def _normalize(img: np.ndarray, lo: float = 0.03, hi: float = 0.97) -> np.ndarray:
    mn, mx = img.min(), img.max()
    if mx - mn < 1e-12:
        return np.full_like(img, (lo + hi) / 2.0)
    return lo + (hi - lo) * (img - mn) / (mx - mn)


def _gradient(h, w, rng):
    y, x = _coords(h, w)
    a, b = rng.uniform(-1.0, 1.0, 2)
    return a * x + b * y + 0.3 * np.sin(2 * np.pi * (x * rng.uniform(0.5, 2.0)))


def _blobs(h, w, rng, count=6):
    y, x = _coords(h, w)
    img = np.zeros((h, w))
    for _ in range(count):
        cy, cx = rng.uniform(0.0, 1.0, 2)
        s = rng.uniform(0.05, 0.35)
        amp = rng.uniform(-1.0, 1.0)
        img += amp * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * s * s))
    return img


def _discs(h, w, rng, count=5):
    y, x = _coords(h, w)
    img = np.zeros((h, w))
    for _ in range(count):
        cy, cx = rng.uniform(0.1, 0.9, 2)
        r = rng.uniform(0.08, 0.3)
        level = rng.uniform(0.0, 1.0)
        img = np.where((y - cy) ** 2 + (x - cx) ** 2 < r * r, level, img)
    return img


def _bars(h, w, rng):
    y, x = _coords(h, w)
    freq = rng.uniform(3.0, 9.0)
    angle = rng.uniform(0.0, np.pi)
    t = x * np.cos(angle) + y * np.sin(angle)
    return (np.sin(2 * np.pi * freq * t) > 0).astype(np.float64)


def _texture(h, w, rng):
    y, x = _coords(h, w)
    img = np.zeros((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(4.0, 16.0, 2)
        ph = rng.uniform(0.0, 2 * np.pi)
        img += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * (fy * y + fx * x) + ph)
    return img


_KINDS = ("gradient", "blobs", "discs", "bars", "texture")


def synthetic_image(kind: str, height: int, width: int, seed: int = 0) -> np.ndarray:
    """One [0,1] grayscale image of the requested kind."""
    rng = np.random.default_rng([seed, _KINDS.index(kind)])
    fn = {"gradient": _gradient, "blobs": _blobs, "discs": _discs,
          "bars": _bars, "texture": _texture}[kind]
    return _normalize(fn(height, width, rng))


def natural_set(count: int = 5, size: tuple[int, int] = (128, 128), seed: int = 7) -> list[np.ndarray]:
    """Photo-like images: smooth tonal fields with soft structure.

    A light blur keeps them continuous-tone (no hard synthetic edges),
    which is what the residual-narrowing analysis assumes.
    """
    h, w = size
    smooth = gaussian_kernel(1.0, 5)
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        img = (
            0.8 * _blobs(h, w, rng, count=8)
            + 0.5 * _gradient(h, w, rng)
            + 0.25 * _texture(h, w, rng)
            + 0.3 * _discs(h, w, rng, count=3)
        )
        out.append(_normalize(convolve_same(img, smooth)))
    return out


def structured_set(count: int = 4, size: tuple[int, int] = (64, 64), seed: int = 11) -> list[np.ndarray]:
    """Edge- and texture-heavy images for toy training runs."""
    h, w = size
    smooth = gaussian_kernel(0.6, 3)
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, 100 + i])
        img = (
            0.6 * _discs(h, w, rng, count=4)
            + 0.4 * _bars(h, w, rng)
            + 0.3 * _gradient(h, w, rng)
            + 0.2 * _texture(h, w, rng)
        )
        out.append(_normalize(convolve_same(img, smooth)))
    return out


def color_set(count: int = 3, size: tuple[int, int] = (64, 64), seed: int = 3) -> list[np.ndarray]:
    """(h, w, 3) color images built from correlated grayscale fields."""
    h, w = size
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, 200 + i])
        lum = _normalize(_blobs(h, w, rng, count=6) + 0.5 * _gradient(h, w, rng))
        planes = []
        for _ in range(3):
            tint = _normalize(_blobs(h, w, rng, count=3))
            planes.append(np.clip(0.7 * lum + 0.3 * tint, 0.0, 1.0))
        out.append(np.stack(planes, axis=2))
    return out

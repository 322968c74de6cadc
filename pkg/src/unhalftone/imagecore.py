"""Image containers, color handling, and binary PGM/PPM file I/O.

Images are numpy float64 arrays in row-major (height, width) layout:

- continuous-tone grayscale images live in [0, 1]
- halftones are {0.0, 1.0}-valued arrays of the same shape
- signed layers (residuals, detail layers, Laplacian maps) reuse the
  grayscale container and may leave [0, 1]; :func:`clamp01` restores the
  displayable range
- color images are (height, width, 3) arrays in R, G, B plane order

The mandatory on-disk format is binary PGM (magic ``P5``, maxval 255).
Binary PPM (``P6``) is supported as the color companion. Arrays are
treated as immutable after construction; nothing in this package writes
into an image it was handed.
"""

from __future__ import annotations

import os

import numpy as np

# ITU-R BT.601 luma weights, the conventional choice for print work.
GRAY_WEIGHTS = (0.299, 0.587, 0.114)

_WHITESPACE_SET = {bytes([b]) for b in b" \t\n\r\x0b\x0c"}


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported PNM files."""


def _require_gray(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must be a 2-D array with positive dimensions")
    return img


def _require_color(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must be an (h, w, 3) array with positive dimensions")
    return img


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        elif buf[pos : pos + 1] in _WHITESPACE_SET:
            pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos : pos + 1] not in _WHITESPACE_SET:
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated header: expected another token")
    return buf[start:pos], pos


def _parse_pnm(buf: bytes, magic: bytes, channels: int) -> np.ndarray:
    tok, pos = _next_token(buf, 0)
    if tok != magic:
        raise ImageFormatError(
            f"bad magic {tok[:8]!r}: expected binary PNM {magic.decode()!r}"
        )
    dims = []
    for field in ("width", "height", "maxval"):
        tok, pos = _next_token(buf, pos)
        if not tok.isdigit():
            raise ImageFormatError(f"malformed header: non-numeric {field} {tok[:16]!r}")
        dims.append(int(tok))
    width, height, maxval = dims
    if width < 1 or height < 1:
        raise ImageFormatError(f"malformed header: degenerate size {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}: only 255 is accepted")
    pos += 1  # single whitespace byte after maxval
    count = width * height * channels
    payload = buf[pos : pos + count]
    if len(payload) < count:
        raise ImageFormatError(
            f"truncated pixel payload: expected {count} bytes, found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return data.reshape(height, width)
    return data.reshape(height, width, channels)


def load_pgm(path: str | os.PathLike) -> np.ndarray:
    """Load a binary PGM (P5, maxval 255) as float64 in [0, 1]."""
    with open(path, "rb") as fh:
        return _parse_pnm(fh.read(), b"P5", 1)


def load_ppm(path: str | os.PathLike) -> np.ndarray:
    """Load a binary PPM (P6, maxval 255) as (h, w, 3) float64 in [0, 1]."""
    with open(path, "rb") as fh:
        return _parse_pnm(fh.read(), b"P6", 3)


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load a PGM or PPM, dispatching on the magic bytes."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, _ = _next_token(buf, 0)
    if magic == b"P5":
        return _parse_pnm(buf, b"P5", 1)
    if magic == b"P6":
        return _parse_pnm(buf, b"P6", 3)
    raise ImageFormatError(f"bad magic {magic[:8]!r}: expected P5 or P6")


def _quantize(img: np.ndarray) -> np.ndarray:
    # round half up so 0.5 maps to 128
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_pgm(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write a grayscale image as binary PGM; values are clamped to [0, 1]."""
    img = _require_gray(img)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_quantize(img).tobytes())


def save_ppm(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write a color image as binary PPM; values are clamped to [0, 1]."""
    img = _require_color(img)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_quantize(img).tobytes())


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write PGM for 2-D input, PPM for (h, w, 3) input."""
    img = np.asarray(img)
    if img.ndim == 2:
        save_pgm(img, path)
    else:
        save_ppm(img, path)


def to_grayscale(color: np.ndarray) -> np.ndarray:
    """BT.601 luma: 0.299 R + 0.587 G + 0.114 B."""
    color = _require_color(color)
    wr, wg, wb = GRAY_WEIGHTS
    return wr * color[:, :, 0] + wg * color[:, :, 1] + wb * color[:, :, 2]


def split_planes(color: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split an (h, w, 3) image into copies of its R, G, B planes."""
    color = _require_color(color)
    return (
        color[:, :, 0].copy(),
        color[:, :, 1].copy(),
        color[:, :, 2].copy(),
    )


def merge_planes(r: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stack three equally sized planes into an (h, w, 3) image."""
    r = _require_gray(r, "R plane")
    g = _require_gray(g, "G plane")
    b = _require_gray(b, "B plane")
    if not (r.shape == g.shape == b.shape):
        raise ValueError(
            f"plane dimensions differ: {r.shape}, {g.shape}, {b.shape}"
        )
    return np.stack([r, g, b], axis=2)


def clamp01(img: np.ndarray) -> np.ndarray:
    """Clamp every pixel into [0, 1]; in-range pixels are unchanged."""
    return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)

"""Image I/O, luma conversion and bicubic resampling.

Images are ``(height, width, channels)`` float64 arrays with values in
``[0, 1]`` and ``channels`` in ``{1, 3}``.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError


class ImageFormatError(Exception):
    pass


class UnsupportedFormatError(ImageFormatError):
    pass


class DecodeError(ImageFormatError):
    pass


_SUPPORTED_FORMATS = {"PNG", "PPM"}
_MODES = {"L": 1, "RGB": 3}


def load_image(path) -> np.ndarray:
    try:
        with PILImage.open(path) as img:
            if img.format not in _SUPPORTED_FORMATS:
                raise UnsupportedFormatError(f"{path}: unsupported container {img.format}")
            if img.mode not in _MODES:
                raise UnsupportedFormatError(f"{path}: unsupported pixel mode {img.mode} (need 8-bit gray or RGB)")
            if img.format == "PNG" and img.info.get("interlace"):
                raise UnsupportedFormatError(f"{path}: interlaced PNG is not supported")
            img.load()
            arr = np.asarray(img, dtype=np.uint8)
    except ImageFormatError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(image: np.ndarray, path) -> None:
    """Write PNG, or PPM/PGM when the suffix asks for it; values are clamped to [0, 1]."""
    if image.ndim == 2:
        image = image[:, :, None]
    if image.shape[2] not in (1, 3):
        raise ValueError(f"save_image: expected 1 or 3 channels, got {image.shape[2]}")
    q = to_uint8(image)
    img = PILImage.fromarray(q[:, :, 0] if q.shape[2] == 1 else q, mode="L" if q.shape[2] == 1 else "RGB")
    suffix = Path(path).suffix.lower()
    fmt = "PPM" if suffix in (".ppm", ".pgm", ".pnm") else "PNG"
    img.save(path, format=fmt)


def rgb_to_y(image: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luma on [0, 1] input; returns an ``(h, w, 1)`` image."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"rgb_to_y: expected an (h, w, 3) image, got shape {image.shape}")
    r, g, b = image[..., 0], image[..., 1], image[..., 2]
    y = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
    return y[:, :, None]


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """Dense ``(out_len, in_len)`` interpolation matrix along one axis.

    Sample centers map as ``u = (x + 0.5) / scale - 0.5``; taps outside the
    image are clamped to the border.  Rows are normalized to sum to one.
    """
    scale = out_len / in_len
    width = 4.0
    if antialias and scale < 1:
        kernel = lambda d: scale * cubic(scale * d)  # noqa: E731
        width /= scale
    else:
        kernel = cubic
    u = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2).astype(np.int64) + 1
    taps = int(math.ceil(width)) + 1
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kernel(u[:, None] - idx)
    w /= w.sum(axis=1, keepdims=True)
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, np.clip(idx, 0, in_len - 1).ravel()), w.ravel())
    return mat


def bicubic_resize(image: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bicubic_resize: output size must be positive, got {out_h}x{out_w}")
    squeeze = image.ndim == 2
    if squeeze:
        image = image[:, :, None]
    h, w, _ = image.shape
    mh = resize_matrix(h, out_h, antialias)
    mw = resize_matrix(w, out_w, antialias)
    out = np.einsum("ij,jkc,lk->ilc", mh, image, mw, optimize=True)
    return out[:, :, 0] if squeeze else out


def downscale(hr: np.ndarray, s: int) -> np.ndarray:
    """Antialiased bicubic LR counterpart, clamped to [0, 1]; HR dims must be divisible by ``s``."""
    h, w = hr.shape[:2]
    if h % s or w % s:
        raise ValueError(f"downscale: HR size {h}x{w} not divisible by {s}")
    return np.clip(bicubic_resize(hr, h // s, w // s, antialias=True), 0.0, 1.0)


def crop_to_multiple(image: np.ndarray, s: int) -> np.ndarray:
    h, w = image.shape[:2]
    return image[: h - h % s, : w - w % s]

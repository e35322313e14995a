"""PSNR / SSIM on the luma channel and a directory benchmark runner."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import list_images
from .imaging import crop_to_multiple, downscale, load_image, rgb_to_y
from .model import Model

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class EmptyDatasetError(ValueError):
    pass


def _prepare(a: np.ndarray, b: np.ndarray, crop: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 3:
        if a.shape[2] != 1:
            raise ValueError(f"expected single-channel images, got shape {a.shape}")
        a = a[:, :, 0]
    if b.ndim == 3:
        if b.shape[2] != 1:
            raise ValueError(f"expected single-channel images, got shape {b.shape}")
        b = b[:, :, 0]
    if crop < 0:
        raise ValueError("crop must be >= 0")
    if crop:
        a = a[crop:-crop, crop:-crop]
        b = b[crop:-crop, crop:-crop]
    if a.shape != b.shape:
        raise ValueError(f"image sizes differ after crop: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("nothing left to compare after crop")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, crop: int = 0) -> float:
    """PSNR in dB for data in [0, 1]; identical inputs report ``PSNR_CAP``."""
    a, b = _prepare(a, b, crop)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return 10.0 * np.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    tmp = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(tmp, k, axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray, crop: int = 0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over the valid region."""
    a, b = _prepare(a, b, crop)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    g = gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)  # (name, psnr, ssim)
    scale: int = 2
    crop: int = 2
    model_id: str = ""

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))

    def summary(self) -> str:
        return (f"model={self.model_id} scale={self.scale} crop={self.crop} images={len(self.rows)} "
                f"psnr={self.mean_psnr:.4f} ssim={self.mean_ssim:.6f}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["name", "psnr", "ssim"])
            for name, p, s in self.rows:
                w.writerow([name, f"{p:.6f}", f"{s:.8f}"])
            w.writerow(["mean", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.8f}"])


def score_pairs(pairs: Iterable[tuple[str, np.ndarray, np.ndarray]], scale: int,
                crop: Optional[int] = None, model_id: str = "") -> EvalReport:
    """Score ``(name, sr_rgb, hr_rgb)`` triples on Y; ``crop`` defaults to ``scale``."""
    crop = scale if crop is None else crop
    report = EvalReport(scale=scale, crop=crop, model_id=model_id)
    for name, sr, hr in pairs:
        ys = rgb_to_y(np.clip(sr, 0.0, 1.0))
        yh = rgb_to_y(hr)
        report.rows.append((name, psnr(ys, yh, crop), ssim(ys, yh, crop)))
    if not report.rows:
        raise EmptyDatasetError("no images to evaluate")
    return report


Upscaler = Union[Model, Callable[[np.ndarray], np.ndarray]]


def _as_rgb(img: np.ndarray) -> np.ndarray:
    return np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img


def evaluate(model: Upscaler, hr_dir, scale: int, crop: Optional[int] = None, model_id: str = "") -> EvalReport:
    """Benchmark ``model`` on every image of ``hr_dir`` (sorted by filename).

    ``model`` is a :class:`Model` or any callable mapping an LR HWC image to
    an SR image.
    """
    paths = list_images(hr_dir)
    if not paths:
        raise EmptyDatasetError(f"no images found in {hr_dir}")
    upscale = model.upscale if isinstance(model, Model) else model

    def pairs():
        for path in paths:
            hr = crop_to_multiple(_as_rgb(load_image(path)), scale)
            yield path.name, upscale(downscale(hr, scale)), hr

    return score_pairs(pairs(), scale, crop, model_id)

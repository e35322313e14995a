"""Training patches, dihedral augmentation and dataset loading."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .imaging import crop_to_multiple, downscale, load_image

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")


@dataclass
class PatchPair:
    lr: np.ndarray
    hr: np.ndarray
    source: str
    top: int  # LR grid
    left: int


def sample_patch(hr: np.ndarray, p: int, s: int, rng: np.random.Generator,
                 lr: Optional[np.ndarray] = None, source: str = "") -> Optional[PatchPair]:
    """Draw an aligned LR ``p x p`` / HR ``sp x sp`` window uniformly.

    ``lr`` may be passed to reuse a precomputed downscale of ``hr`` (cropped
    to a multiple of ``s``).  Returns ``None`` when the LR image is smaller
    than ``p``; the caller should pick another image.
    """
    hr = crop_to_multiple(hr, s)
    if lr is None:
        if min(hr.shape[:2]) < s:
            return None
        lr = downscale(hr, s)
    lh, lw = lr.shape[:2]
    if lh < p or lw < p:
        return None
    top = int(rng.integers(0, lh - p + 1))
    left = int(rng.integers(0, lw - p + 1))
    return PatchPair(
        lr=lr[top:top + p, left:left + p],
        hr=hr[s * top:s * (top + p), s * left:s * (left + p)],
        source=source, top=top, left=left,
    )


def dihedral(image: np.ndarray, d: int) -> np.ndarray:
    """Element ``d`` of the dihedral group: rotate by ``(d % 4) * 90`` degrees, then mirror if ``d >= 4``."""
    if not 0 <= d < 8:
        raise ValueError(f"dihedral index must be in 0..7, got {d}")
    out = np.rot90(image, d % 4, axes=(0, 1))
    if d >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def dihedral_inverse(d: int) -> int:
    # mirrored elements are involutions
    return (4 - d) % 4 if d < 4 else d


def augment(pair: PatchPair, d: int) -> PatchPair:
    return PatchPair(lr=dihedral(pair.lr, d), hr=dihedral(pair.hr, d),
                     source=pair.source, top=pair.top, left=pair.left)


def list_images(directory) -> list[Path]:
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return paths


class Dataset:
    """HR images with their cached LR counterparts for one scale."""

    def __init__(self, images: list[np.ndarray], scale: int, names: Optional[list[str]] = None):
        if not images:
            raise ValueError("dataset is empty")
        self.scale = scale
        self.names = names or [f"img{i}" for i in range(len(images))]
        self.hr = []
        self.lr = []
        for img in images:
            if img.shape[2] == 1:
                img = np.repeat(img, 3, axis=2)
            hr = crop_to_multiple(img, scale)
            self.hr.append(hr)
            self.lr.append(downscale(hr, scale) if min(hr.shape[:2]) >= scale else hr[:0, :0])

    @classmethod
    def from_dir(cls, directory, scale: int) -> "Dataset":
        paths = list_images(directory)
        if not paths:
            raise ValueError(f"no images found in {directory}")
        return cls([load_image(p) for p in paths], scale, [p.name for p in paths])

    def __len__(self) -> int:
        return len(self.hr)

    def sample_batch(self, batch_size: int, p: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Random augmented patches as ``(B, 3, p, p)`` LR and ``(B, 3, sp, sp)`` HR arrays."""
        if all(min(lr.shape[:2]) < p for lr in self.lr):
            raise ValueError(f"no image is large enough for LR patch size {p}")
        lrs, hrs = [], []
        while len(lrs) < batch_size:
            i = int(rng.integers(len(self)))
            pair = sample_patch(self.hr[i], p, self.scale, rng, lr=self.lr[i], source=self.names[i])
            if pair is None:
                continue
            pair = augment(pair, int(rng.integers(8)))
            lrs.append(pair.lr.transpose(2, 0, 1))
            hrs.append(pair.hr.transpose(2, 0, 1))
        return np.stack(lrs), np.stack(hrs)


def synthetic_images(count: int, size: int = 96, seed: int = 0) -> list[np.ndarray]:
    """Deterministic gray RGB images of hard-edged black and white boxes and disks."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    images = []
    for _ in range(count):
        img = np.zeros((size, size))
        for _ in range(40):
            val = float(rng.random() < 0.5)
            if rng.random() < 0.75:
                y0, x0 = rng.integers(0, size - 4, 2)
                h, w = rng.integers(2, 12, 2)
                img[y0:y0 + h, x0:x0 + w] = val
            else:
                cy, cx = rng.uniform(0, size, 2)
                r = rng.uniform(2, 7)
                img[(yy - cy) ** 2 + (xx - cx) ** 2 < r * r] = val
        images.append(np.repeat(img[:, :, None], 3, axis=2))
    return images

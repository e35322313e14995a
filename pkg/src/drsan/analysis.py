"""Inspection of residual coefficients and attention maps of a trained model."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import tensor as T
from .imaging import rgb_to_y
from .model import Model, Trace
from .tensor import Tensor


@dataclass
class AttentionTrace:
    coeffs: list  # per DRAG, (n, N(N+1)/2)
    alphas: list  # per residual block, DRAG-major, (n, c, h, w) or None without RSA
    output: np.ndarray  # raw SR batch (n, 3, sh, sw)
    source: str = ""


def _as_batch(image, dtype) -> Tensor:
    if isinstance(image, Tensor):
        return Tensor(image.data.astype(dtype))
    arr = np.asarray(image)
    if arr.ndim == 3:
        arr = arr.transpose(2, 0, 1)[None]
    return Tensor(arr.astype(dtype))


def extract_trace(model: Model, image, source: str = "") -> AttentionTrace:
    """One instrumented forward pass; ``image`` is an HWC image or an NCHW tensor."""
    trace = Trace()
    with T.no_grad():
        out = model.forward(_as_batch(image, model.dtype), trace=trace)
    return AttentionTrace(coeffs=trace.coeffs, alphas=trace.alphas, output=out.data, source=source)


def _alpha(trace: AttentionTrace, block: int) -> np.ndarray:
    if not 0 <= block < len(trace.alphas):
        raise IndexError(f"block {block} out of range (model has {len(trace.alphas)} residual blocks)")
    a = trace.alphas[block]
    if a is None:
        raise ValueError("attention disabled in this model (rsa_enabled=false)")
    return a


def attention_histogram(trace: AttentionTrace, block: int, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Counts of attention values of one block over ``bins`` equal bins on [0, 1]."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    counts, edges = np.histogram(_alpha(trace, block).astype(np.float64), bins=bins, range=(0.0, 1.0))
    return edges, counts


def attention_spatial_map(trace: AttentionTrace, block: int, sample: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Channel-averaged attention of one block as ``(min-max normalized, raw)`` maps."""
    raw = _alpha(trace, block)[sample].astype(np.float64).mean(axis=0)
    lo, hi = raw.min(), raw.max()
    norm = (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)
    return norm, raw


def _to_image(batch: np.ndarray) -> np.ndarray:
    return np.clip(batch[0].astype(np.float64).transpose(1, 2, 0), 0.0, 1.0)


def transplant_dra(model: Model, target, donor) -> tuple[np.ndarray, np.ndarray]:
    """Super-resolve ``target`` with every DRAG's coefficients taken from ``donor``.

    Returns the transplanted SR image and ``|Y(transplanted) - Y(original)|``.
    """
    if not model.config.has_drm:
        raise ValueError("transplant needs a model with dynamic residual coefficients")
    donor_trace = extract_trace(model, donor)
    x = _as_batch(target, model.dtype)
    with T.no_grad():
        original = model.forward(x).data
        swapped = model.forward(x, dra_override=donor_trace.coeffs).data
    sr = _to_image(swapped)
    diff = np.abs(rgb_to_y(sr) - rgb_to_y(_to_image(original)))
    return sr, diff


def write_dra_csv(traces: Iterable[AttentionTrace], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["image", "drag", "index", "value"])
        for tr in traces:
            for k, coeffs in enumerate(tr.coeffs):
                for sample, vec in enumerate(coeffs):
                    name = tr.source if len(coeffs) == 1 else f"{tr.source}#{sample}"
                    for i, v in enumerate(vec):
                        w.writerow([name, k, i, repr(float(v))])


def write_hist_csv(trace: AttentionTrace, path, bins: int = 20, blocks: Optional[Iterable[int]] = None) -> None:
    blocks = range(len(trace.alphas)) if blocks is None else blocks
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["block", "bin_lo", "bin_hi", "count"])
        for b in blocks:
            edges, counts = attention_histogram(trace, b, bins)
            for lo, hi, cnt in zip(edges[:-1], edges[1:], counts):
                w.writerow([b, repr(float(lo)), repr(float(hi)), int(cnt)])


def grid_patches(image: np.ndarray, size: int, stride: Optional[int] = None) -> list[tuple[str, np.ndarray]]:
    """Non-overlapping (or strided) square patches, named ``y{top}x{left}``."""
    stride = stride or size
    h, w = image.shape[:2]
    out = []
    for top in range(0, h - size + 1, stride):
        for left in range(0, w - size + 1, stride):
            out.append((f"y{top}x{left}", image[top:top + size, left:left + size]))
    return out

"""Lightweight single-image super-resolution with dynamic residual self-attention.

A pure-numpy implementation: a small reverse-mode autograd engine, the
DRSAN network, a bicubic data pipeline, Adam training, PSNR/SSIM evaluation
and attention inspection tools.
"""

from .config import NetworkConfig, PRESETS, preset
from .model import Model, build_network, count_multi_adds, count_params
from .checkpoint import load_model, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "NetworkConfig", "PRESETS", "preset",
    "Model", "build_network", "count_params", "count_multi_adds",
    "load_model", "save_checkpoint",
]

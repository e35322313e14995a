"""Network hyperparameters and named presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

CONNECTION_MODES = ("standard_res", "all_res", "dra")
DRM_ACTIVATIONS = ("none", "sigmoid", "tanh")
SCALES = (2, 3, 4)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    K: int = 4
    N: int = 4
    c: int = 32
    scale: int = 2
    drm_hidden: int = 16
    connection_mode: str = "dra"
    rsa_enabled: bool = True
    concat_enabled: bool = True
    drm_activation: str = "none"

    def __post_init__(self):
        for name in ("K", "N", "c", "drm_hidden"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {self.scale!r}")
        if self.connection_mode not in CONNECTION_MODES:
            raise ConfigError(f"connection_mode must be one of {CONNECTION_MODES}, got {self.connection_mode!r}")
        if self.drm_activation not in DRM_ACTIVATIONS:
            raise ConfigError(f"drm_activation must be one of {DRM_ACTIVATIONS}, got {self.drm_activation!r}")

    @property
    def num_coeffs(self) -> int:
        """Length of the per-DRAG residual coefficient vector, N(N+1)/2."""
        return self.N * (self.N + 1) // 2

    @property
    def has_drm(self) -> bool:
        return self.connection_mode == "dra"

    @property
    def has_fusion(self) -> bool:
        return self.concat_enabled

    def replace(self, **changes) -> "NetworkConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NetworkConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        base = PRESETS[_preset_key(preset)].to_dict() if preset else {}
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base.update(d)
        return cls(**base)


PRESETS = {
    "drsan-32s": NetworkConfig(c=32, K=4, N=4),
    "drsan-32m": NetworkConfig(c=32, K=8, N=4),
    "drsan-32l": NetworkConfig(c=32, K=10, N=4),
    "drsan-48s": NetworkConfig(c=48, K=4, N=3),
    "drsan-48m": NetworkConfig(c=48, K=8, N=3),
}


def _preset_key(name: str) -> str:
    key = name.lower()
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return key


def preset(name: str, scale: int = 2, **overrides) -> NetworkConfig:
    return PRESETS[_preset_key(name)].replace(scale=scale, **overrides)


def load_config(path: str | Path) -> NetworkConfig:
    """Read a JSON network config; a ``"train"`` section, if present, is ignored here."""
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    return config_from_json(raw)


def config_from_json(raw: Any) -> NetworkConfig:
    if isinstance(raw, str):
        return preset(raw)
    if not isinstance(raw, dict):
        raise ConfigError("config JSON must be an object or a preset name")
    net = raw.get("network", {k: v for k, v in raw.items() if k != "train"})
    if isinstance(net, str):
        return preset(net)
    return NetworkConfig.from_dict(net)

"""DRSAN network: residual blocks, DRM, DRSA, DRAG and the full SR model.

Parameter names are hierarchical and 0-indexed, e.g.
``drag.2.rb.1.conv.0.weight``.  Layout of one DRAG with ``N`` blocks:

* ``rb.{j}``: ``prelu.0 -> conv.0 (3x3, c->c) -> prelu.1 -> conv.1 (3x3, c->c)``
* ``drm``: ``conv_in (1x1, c->hidden) -> prelu -> conv_out (1x1, hidden->N(N+1)/2)``,
  then global average pooling (dra mode only)
* ``fuse``: 1x1 conv over ``concat[f_0, ..., f_N]`` (``c*(N+1) -> c``)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from . import tensor as T
from .config import ConfigError, NetworkConfig
from .tensor import ShapeError, Tensor


class ParameterStore:
    """Named trainable arrays; iteration is in lexicographic name order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.ascontiguousarray(array), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def tensors(self) -> list[Tensor]:
        return [self._params[n] for n in self.names()]

    def total(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()


@dataclass
class Trace:
    """Intermediate values recorded during one instrumented forward pass."""

    coeffs: list = field(default_factory=list)  # per DRAG: (n, N(N+1)/2)
    alphas: list = field(default_factory=list)  # per block, DRAG-major: (n, c, h, w)


def coeff_index(n: int, i: int) -> int:
    """Position of r_i^n (1 <= n, 0 <= i < n) in the flat coefficient vector."""
    return (n - 1) * n // 2 + i


class Model:
    def __init__(self, config: NetworkConfig, params: ParameterStore):
        self.config = config
        self.params = params

    @property
    def dtype(self):
        return next(iter(self.params.tensors())).dtype

    def astype(self, dtype) -> "Model":
        store = ParameterStore()
        for name, t in self.params.items():
            store.add(name, t.data.astype(dtype))
        return Model(self.config, store)

    def forward(self, x: Tensor, trace: Optional[Trace] = None,
                dra_override: Optional[Sequence[np.ndarray]] = None) -> Tensor:
        return network_forward(x, self, trace=trace, dra_override=dra_override)

    __call__ = forward

    def upscale(self, image: np.ndarray) -> np.ndarray:
        """Super-resolve one HWC image in [0, 1]; output is clamped to [0, 1]."""
        x = Tensor(image.transpose(2, 0, 1)[None].astype(self.dtype))
        with T.no_grad():
            y = self.forward(x).data[0]
        return np.clip(y.transpose(1, 2, 0), 0.0, 1.0).astype(np.float64)


def _conv(store: ParameterStore, name: str, out_c: int, in_c: int, k: int, rng, dtype) -> None:
    bound = 1.0 / np.sqrt(in_c * k * k)
    store.add(f"{name}.weight", rng.uniform(-bound, bound, (out_c, in_c, k, k)).astype(dtype))
    store.add(f"{name}.bias", np.zeros(out_c, dtype=dtype))


def _prelu(store: ParameterStore, name: str, c: int, dtype) -> None:
    store.add(f"{name}.slope", np.full(c, 0.25, dtype=dtype))


def layer_specs(config: NetworkConfig) -> list[tuple]:
    """Every parameterized layer as ``(kind, name, *dims)``, in construction order."""
    c, N = config.c, config.N
    specs = [("conv", "ext", c, 3, 3)]
    for k in range(config.K):
        p = f"drag.{k}"
        for j in range(N):
            specs += [
                ("prelu", f"{p}.rb.{j}.prelu.0", c),
                ("conv", f"{p}.rb.{j}.conv.0", c, c, 3),
                ("prelu", f"{p}.rb.{j}.prelu.1", c),
                ("conv", f"{p}.rb.{j}.conv.1", c, c, 3),
            ]
        if config.has_drm:
            h = config.drm_hidden
            specs += [
                ("conv", f"{p}.drm.conv_in", h, c, 1),
                ("prelu", f"{p}.drm.prelu", h),
                ("conv", f"{p}.drm.conv_out", config.num_coeffs, h, 1),
            ]
        if config.has_fusion:
            specs.append(("conv", f"{p}.fuse", c, c * (N + 1), 1))
    specs.append(("conv", "body", c, c, 3))
    for i, r in enumerate(upsample_factors(config.scale)):
        specs.append(("conv", f"up.{i}", c * r * r, c, 3))
    specs.append(("conv", "rec", 3, c, 3))
    return specs


def upsample_factors(scale: int) -> list[int]:
    if scale in (2, 3):
        return [scale]
    if scale == 4:
        return [2, 2]
    raise ConfigError(f"unsupported scale {scale}")


def build_network(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> Model:
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    for kind, name, *dims in layer_specs(config):
        if kind == "conv":
            _conv(store, name, *dims, rng=rng, dtype=dtype)
        else:
            _prelu(store, name, *dims, dtype=dtype)
    return Model(config, store)


def _apply_conv(x: Tensor, params: ParameterStore, name: str) -> Tensor:
    return T.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"])


def residual_branch(x: Tensor, params: ParameterStore, prefix: str) -> Tensor:
    """F_res: PReLU -> 3x3 conv -> PReLU -> 3x3 conv."""
    y = T.prelu(x, params[f"{prefix}.prelu.0.slope"])
    y = _apply_conv(y, params, f"{prefix}.conv.0")
    y = T.prelu(y, params[f"{prefix}.prelu.1.slope"])
    return _apply_conv(y, params, f"{prefix}.conv.1")


def drm_forward(f0: Tensor, params: ParameterStore, prefix: str, config: NetworkConfig) -> Tensor:
    """Residual coefficients for one DRAG as an ``(n, N(N+1)/2, 1, 1)`` tensor.

    Both 1x1 convolutions run over the full map; pooling comes last.
    """
    y = _apply_conv(f0, params, f"{prefix}.conv_in")
    y = T.prelu(y, params[f"{prefix}.prelu.slope"])
    y = _apply_conv(y, params, f"{prefix}.conv_out")
    r = T.global_avg_pool(y)
    if config.drm_activation == "sigmoid":
        r = T.sigmoid(r)
    elif config.drm_activation == "tanh":
        r = T.tanh(r)
    return r


def drsa_forward(n: int, features: Sequence[Tensor], r: Optional[Tensor], params: ParameterStore,
                 prefix: str, config: NetworkConfig) -> tuple[Tensor, Optional[Tensor]]:
    """Output of the ``n``-th residual block (1-based) and its attention map.

    ``features`` holds ``f_0 .. f_{n-1}``; ``r`` is the DRAG's coefficient
    tensor (ignored unless the connection mode is ``dra``).  The returned
    attention is ``None`` when RSA is disabled.
    """
    if len(features) != n or not 1 <= n <= config.N:
        raise ShapeError(f"drsa_forward: block {n} needs {n} preceding features, got {len(features)}")
    z = residual_branch(features[-1], params, prefix)
    mode = config.connection_mode
    if mode == "standard_res":
        combined = T.add(z, features[-1])
    else:
        fd = None
        for i, f in enumerate(features):
            if mode == "dra":
                j = coeff_index(n, i)
                term = T.mul(f, T.channel_slice(r, j, j + 1))
            else:
                term = f
            fd = term if fd is None else T.add(fd, term)
        combined = T.add(z, fd)
    if not config.rsa_enabled:
        return combined, None
    alpha = T.sigmoid(z)
    return T.mul(combined, alpha), alpha


def drag_forward(x: Tensor, params: ParameterStore, k: int, config: NetworkConfig,
                 trace: Optional[Trace] = None, coeffs: Optional[np.ndarray] = None) -> Tensor:
    """One dynamic residual attention group; maps (n, c, h, w) to the same shape.

    ``coeffs`` replaces the DRM output with fixed ``(n, N(N+1)/2)`` values.
    """
    prefix = f"drag.{k}"
    r = None
    if config.has_drm:
        if coeffs is not None:
            arr = np.asarray(coeffs, dtype=x.dtype).reshape(x.shape[0], config.num_coeffs, 1, 1)
            r = Tensor(arr)
        else:
            r = drm_forward(x, params, f"{prefix}.drm", config)
        if trace is not None:
            trace.coeffs.append(r.data.reshape(r.shape[0], -1).copy())
    features = [x]
    for j in range(config.N):
        f, alpha = drsa_forward(j + 1, features, r, params, f"{prefix}.rb.{j}", config)
        if trace is not None:
            trace.alphas.append(None if alpha is None else alpha.data.copy())
        features.append(f)
    if config.has_fusion:
        return _apply_conv(T.concat_channels(features), params, f"{prefix}.fuse")
    return T.add(features[-1], features[0])


def network_forward(lr: Tensor, model: Model, trace: Optional[Trace] = None,
                    dra_override: Optional[Sequence[np.ndarray]] = None) -> Tensor:
    """LR batch ``(n, 3, h, w)`` to SR batch ``(n, 3, s*h, s*w)``; output is not clamped."""
    config, params = model.config, model.params
    if lr.data.ndim != 4 or lr.shape[1] != 3:
        raise ShapeError(f"network_forward: expected (n, 3, h, w) input, got {lr.shape}")
    if dra_override is not None and len(dra_override) != config.K:
        raise ShapeError(f"dra_override needs {config.K} coefficient arrays, got {len(dra_override)}")
    x0 = _apply_conv(lr, params, "ext")
    x = x0
    for k in range(config.K):
        x = drag_forward(x, params, k, config, trace=trace,
                         coeffs=None if dra_override is None else dra_override[k])
    y = T.add(_apply_conv(x, params, "body"), x0)
    for i, r in enumerate(upsample_factors(config.scale)):
        y = T.pixel_shuffle(_apply_conv(y, params, f"up.{i}"), r)
    return _apply_conv(y, params, "rec")


# ---------------------------------------------------------------------------
# complexity accounting


def count_params(config: NetworkConfig) -> int:
    """Trainable scalar count by closed-form summation."""
    c, N, K, s = config.c, config.N, config.K, config.scale
    conv = lambda out_c, in_c, k: out_c * in_c * k * k + out_c  # noqa: E731
    block = 2 * conv(c, c, 3) + 2 * c
    group = N * block
    if config.has_drm:
        h = config.drm_hidden
        group += conv(h, c, 1) + h + conv(config.num_coeffs, h, 1)
    if config.has_fusion:
        group += conv(c, c * (N + 1), 1)
    up = 2 * conv(4 * c, c, 3) if s == 4 else conv(c * s * s, c, 3)
    return conv(c, 3, 3) + K * group + conv(c, c, 3) + up + conv(3, c, 3)


def count_multi_adds(config: NetworkConfig, hr_h: int = 720, hr_w: int = 1280) -> int:
    """Multiply-accumulates of all convolutions for one ``hr_h x hr_w`` output.

    Pre-upsampler layers run at LR area ``hr_h*hr_w/s^2``; the second x4
    upsampler stage runs at ``hr_h*hr_w/4``; the reconstruction conv at HR.
    """
    s = config.scale
    hr_area = hr_h * hr_w
    if hr_h < 1 or hr_w < 1 or hr_area % (s * s):
        raise ConfigError(f"HR area {hr_h}x{hr_w} is not divisible by scale^2={s * s}")
    lr_area = hr_area // (s * s)
    total = 0
    for kind, name, *dims in layer_specs(config):
        if kind != "conv":
            continue
        out_c, in_c, k = dims
        if name == "rec":
            area = hr_area
        elif name == "up.1":
            area = hr_area // 4
        else:
            area = lr_area
        total += out_c * in_c * k * k * area
    return total

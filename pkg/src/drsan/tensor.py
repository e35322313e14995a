"""Rank-4 tensors with a reverse-mode tape.

Every op takes and returns :class:`Tensor` objects laid out as
``(batch, channels, height, width)``.  Ops record a closure computing the
input gradients from the output gradient; :func:`backward` walks the
recorded graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when an op's shape contract is violated."""


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, finite differences)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float array plus gradient slot.

    Feature maps are rank 4; parameters (biases, slopes) and losses may have
    other ranks.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.op: str = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))


def _result(data: np.ndarray, op: str, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check4(x: Tensor, name: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{name}: expected rank-4 input, got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution


def _conv_taps(k: int, wp: int) -> list:
    return [(dy, dx, dy * wp + dx) for dy in range(k) for dx in range(k)]


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, padding: Optional[int] = None) -> Tensor:
    """Stride-1 'same' convolution (cross-correlation) with zero padding.

    ``weight`` is ``(out_c, in_c, k, k)`` with odd ``k``; ``padding`` defaults
    to ``k // 2`` and must equal it.

    The padded input is flattened channel-major; every kernel tap is a
    shifted contiguous slice of it, stacked into one column buffer and
    contracted with a single GEMM.  Outputs are computed on the padded row
    pitch and the wrap-around columns dropped.
    """
    _check4(x, "conv2d")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be (out_c, in_c, k, k), got {weight.shape}")
    out_c, in_c, kh, kw = weight.shape
    n, c, h, w = x.shape
    if c != in_c:
        raise ShapeError(f"conv2d: input channels {c} != weight in_c {in_c}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    k = kh
    p = k // 2 if padding is None else padding
    if p != k // 2:
        raise ShapeError(f"conv2d: padding {p} does not preserve spatial size for k={k}")
    if bias is not None and bias.shape != (out_c,):
        raise ShapeError(f"conv2d: bias must have shape ({out_c},), got {bias.shape}")
    wd = weight.data

    if k == 1:
        xf = x.data.reshape(n, c, h * w)
        wm = wd.reshape(out_c, c)
        out = np.matmul(wm, xf)
        if bias is not None:
            out += bias.data[:, None]
        out = out.reshape(n, out_c, h, w)

        def backward(g):
            gf = g.reshape(n, out_c, h * w)
            gx = np.matmul(wm.T, gf).reshape(x.shape) if x.requires_grad else None
            gw = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape) if weight.requires_grad else None
            gb = gf.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
            return gx, gw, gb
    else:
        hp, wp = h + 2 * p, w + 2 * p
        total = n * hp * wp
        span = total - (k - 1) * (wp + 1)
        taps = _conv_taps(k, wp)
        # channel-major, batch folded into the flat axis; valid outputs never read across images
        xf = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))).transpose(1, 0, 2, 3).reshape(c, total)
        cols = np.empty((k * k, c, span), dtype=x.data.dtype)
        for t, (_, _, off) in enumerate(taps):
            cols[t] = xf[:, off:off + span]
        cols = cols.reshape(k * k * c, span)
        wm = wd.transpose(0, 2, 3, 1).reshape(out_c, k * k * c)
        acc = np.zeros((out_c, total), dtype=np.result_type(x.data, wd))
        acc[:, :span] = wm @ cols
        out = acc.reshape(out_c, n, hp, wp)[:, :, :h, :w].transpose(1, 0, 2, 3)
        if bias is not None:
            out = out + bias.data[None, :, None, None]

        def backward(g):
            gp = np.zeros((out_c, n, hp, wp), dtype=g.dtype)
            gp[:, :, :h, :w] = g.transpose(1, 0, 2, 3)
            gf = gp.reshape(out_c, total)[:, :span]
            gx = gw = gb = None
            if x.requires_grad:
                gcols = (wm.T @ gf).reshape(k * k, c, span)
                gxf = np.zeros((c, total), dtype=g.dtype)
                for t, (_, _, off) in enumerate(taps):
                    gxf[:, off:off + span] += gcols[t]
                gx = gxf.reshape(c, n, hp, wp)[:, :, p:p + h, p:p + w].transpose(1, 0, 2, 3)
            if weight.requires_grad:
                gw = (gf @ cols.T).reshape(out_c, k, k, c).transpose(0, 3, 1, 2)
            if bias is not None and bias.requires_grad:
                gb = g.sum(axis=(0, 2, 3))
            return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(np.ascontiguousarray(out), "conv2d", parents, backward)


# ---------------------------------------------------------------------------
# pointwise


def prelu(x: Tensor, slopes: Tensor) -> Tensor:
    _check4(x, "prelu")
    c = x.shape[1]
    if slopes.shape != (c,):
        raise ShapeError(f"prelu: expected {c} slopes, got shape {slopes.shape}")
    a = slopes.data.reshape(1, c, 1, 1)
    pos = x.data >= 0
    out = np.where(pos, x.data, a * x.data)

    def backward(g):
        gx = np.where(pos, g, a * g) if x.requires_grad else None
        ga = (np.where(pos, 0, g * x.data)).sum(axis=(0, 2, 3)) if slopes.requires_grad else None
        return gx, ga

    return _result(out, "prelu", (x, slopes), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _result(out, "sigmoid", (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _result(out, "tanh", (x,), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    out = x.data * x.data.dtype.type(factor)

    def backward(g):
        return (g * factor,)

    return _result(out, "scale", (x,), backward)


def _broadcast_ok(a: tuple, b: tuple) -> bool:
    if a == b:
        return True
    if len(a) != 4 or len(b) != 4:
        return False
    return b[0] == a[0] and b[1] in (1, a[1]) and b[2:] == (1, 1)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be ``(n, c', 1, 1)`` with ``c'`` in ``{1, c}``."""
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"add: cannot broadcast {b.shape} onto {a.shape}")

    def backward(g):
        return g, _reduce_to(g, b.shape)

    return _result(a.data + b.data, "add", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with the same broadcast rule as :func:`add`."""
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"mul: cannot broadcast {b.shape} onto {a.shape}")

    def backward(g):
        ga = g * b.data if a.requires_grad else None
        gb = _reduce_to(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, "mul", (a, b), backward)


# ---------------------------------------------------------------------------
# reshaping / reductions


def global_avg_pool(x: Tensor) -> Tensor:
    _check4(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return _result(out, "global_avg_pool", (x,), backward)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: ``out[n, o, y*r+i, x*r+j] = in[n, o*r*r + i*r + j, y, x]``."""
    _check4(x, "pixel_shuffle")
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by r^2={r * r}")
    o = c // (r * r)
    out = x.data.reshape(n, o, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, o, h * r, w * r)

    def backward(g):
        return (pixel_unshuffle_array(g, r),)

    return _result(out, "pixel_shuffle", (x,), backward)


def pixel_unshuffle_array(y: np.ndarray, r: int) -> np.ndarray:
    """Inverse index map of :func:`pixel_shuffle` on a raw array."""
    n, o, hr, wr = y.shape
    h, w = hr // r, wr // r
    return y.reshape(n, o, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, o * r * r, h, w)


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    if not inputs:
        raise ShapeError("concat_channels: empty input list")
    ref = inputs[0].shape
    for t in inputs:
        _check4(t, "concat_channels")
        if (t.shape[0],) + t.shape[2:] != (ref[0],) + ref[2:]:
            raise ShapeError(f"concat_channels: shape {t.shape} does not match {ref} outside the channel axis")
    sizes = [t.shape[1] for t in inputs]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in inputs], axis=1)

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(inputs)))

    return _result(out, "concat", tuple(inputs), backward)


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    _check4(x, "channel_slice")
    c = x.shape[1]
    if not 0 <= start < stop <= c:
        raise ShapeError(f"channel_slice: [{start}, {stop}) out of range for {c} channels")
    out = x.data[:, start:stop].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _result(out, "channel_slice", (x,), backward)


def tensor_sum(x: Tensor) -> Tensor:
    def backward(g):
        return (np.full_like(x.data, g),)

    return _result(np.asarray(x.data.sum()), "sum", (x,), backward)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error; the subgradient at exact ties is 0."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: pred shape {pred.shape} != target shape {target.shape}")
    diff = pred.data - target.data
    m = diff.size

    def backward(g):
        s = np.sign(diff) * (g / m)
        return s, (-s if target.requires_grad else None)

    return _result(np.asarray(np.abs(diff).mean()), "l1_loss", (pred, target), backward)


# ---------------------------------------------------------------------------
# reverse pass


def _topo(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, leaves: Optional[Iterable[Tensor]] = None) -> None:
    """Populate ``.grad`` of every requires-grad leaf reachable from ``loss``.

    Gradients are assigned, not accumulated.  Leaves listed in ``leaves`` that
    the graph never reaches receive a zero gradient.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if leaves is not None:
        for leaf in leaves:
            leaf.zero_grad()
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.astype(node.data.dtype, copy=False).reshape(node.shape)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def finite_diff_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn(*inputs)`` must return a scalar tensor.  Every element of every input
    is perturbed; run in float64.
    """
    for t in inputs:
        t.requires_grad = True
        t.data = np.ascontiguousarray(t.data)  # perturbation below writes through a flat view
    loss = fn(*inputs)
    backward(loss, inputs)
    worst = 0.0
    with no_grad():
        for t in inputs:
            flat = t.data.reshape(-1)
            analytic = t.grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(fn(*inputs).data)
                flat[i] = orig - eps
                down = float(fn(*inputs).data)
                flat[i] = orig
                numeric = (up - down) / (2 * eps)
                a = float(analytic[i])
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
    return worst

"""Binary ``.drsan`` checkpoint format.

Layout (all integers little-endian)::

    magic      b"DRSANCKP"
    version    u32
    config     u32 length + UTF-8 JSON
    iteration  u64
    params     u32 count, then per entry: u16 name length, name,
               u8 ndim, u32 dims..., float32 data
    optimizer  u8 flag; if 1: u64 step, then two blocks shaped like
               ``params`` (first moments, second moments)
    end        b"END!"
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import NetworkConfig
from .model import Model, build_network

MAGIC = b"DRSANCKP"
END = b"END!"
VERSION = 1


class CheckpointError(Exception):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ParameterMismatchError(CheckpointError):
    pass


@dataclass
class OptimizerState:
    step: int
    m: dict
    v: dict


@dataclass
class Checkpoint:
    model: Model
    iteration: int = 0
    optimizer: Optional[OptimizerState] = None


def _write_arrays(buf: io.BytesIO, arrays: dict) -> None:
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())


def to_bytes(model: Model, iteration: int = 0, optimizer: Optional[OptimizerState] = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<Q", iteration))
    _write_arrays(buf, {name: t.data for name, t in model.params.items()})
    if optimizer is None:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01")
        buf.write(struct.pack("<Q", optimizer.step))
        _write_arrays(buf, optimizer.m)
        _write_arrays(buf, optimizer.v)
    buf.write(END)
    return buf.getvalue()


def save_checkpoint(model: Model, path, iteration: int = 0, optimizer: Optional[OptimizerState] = None) -> None:
    Path(path).write_bytes(to_bytes(model, iteration, optimizer))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated: needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_arrays(r: _Reader) -> dict:
    (count,) = r.unpack("<I")
    out = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    return out


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a DRSAN checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, expected {VERSION}")
    (clen,) = r.unpack("<I")
    config = NetworkConfig.from_dict(json.loads(r.take(clen).decode("utf-8")))
    (iteration,) = r.unpack("<Q")
    arrays = _read_arrays(r)
    optimizer = None
    (flag,) = r.unpack("<B")
    if flag:
        (step,) = r.unpack("<Q")
        optimizer = OptimizerState(step=step, m=_read_arrays(r), v=_read_arrays(r))
    if r.take(len(END)) != END:
        raise CheckpointError("checkpoint end marker missing")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after end marker")
    model = build_network(config)
    fill_parameters(model, arrays)
    return Checkpoint(model=model, iteration=iteration, optimizer=optimizer)


def fill_parameters(model: Model, arrays: dict) -> None:
    """Copy named arrays into ``model``; every name and shape must match exactly."""
    expected = model.params.names()
    for name in sorted(set(expected) | set(arrays)):
        if name not in arrays:
            raise ParameterMismatchError(f"missing parameter {name!r} in checkpoint")
        if name not in model.params:
            raise ParameterMismatchError(f"unknown parameter {name!r} in checkpoint")
        if arrays[name].shape != model.params[name].shape:
            raise ParameterMismatchError(
                f"shape mismatch for {name!r}: checkpoint {arrays[name].shape}, model {model.params[name].shape}")
    for name in expected:
        model.params[name].data = np.array(arrays[name], dtype=model.params[name].dtype)


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def load_model(path) -> Model:
    return load_checkpoint(path).model


def load_parameters(model: Model, path) -> Checkpoint:
    """Load a checkpoint's parameters into an already built ``model``."""
    ckpt = load_checkpoint(path)
    fill_parameters(model, {name: t.data for name, t in ckpt.model.params.items()})
    return Checkpoint(model=model, iteration=ckpt.iteration, optimizer=ckpt.optimizer)

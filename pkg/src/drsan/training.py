"""Adam optimizer, step learning-rate schedule and the training loop."""

from __future__ import annotations

import csv
import dataclasses
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .checkpoint import OptimizerState, save_checkpoint
from .data import Dataset
from .model import Model, ParameterStore
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 2e-4
    decay: float = 0.85
    decay_every: int = 200_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 1000
    patch_size: int = 48
    seed: int = 0
    workers: int = 1
    log_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("lr", "decay", "eps", "decay_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.iterations < 0 or self.workers < 1 or self.patch_size < 1:
            raise ValueError("iterations >= 0, workers >= 1 and patch_size >= 1 required")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: ParameterStore) -> "AdamState":
        return cls(m={n: np.zeros_like(p.data) for n, p in params.items()},
                   v={n: np.zeros_like(p.data) for n, p in params.items()})

    def to_optimizer_state(self) -> OptimizerState:
        return OptimizerState(step=self.t, m=self.m, v=self.v)

    @classmethod
    def from_optimizer_state(cls, st: OptimizerState) -> "AdamState":
        return cls(m=dict(st.m), v=dict(st.v), t=st.step)


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    return cfg.lr * cfg.decay ** (iteration // cfg.decay_every)


def adam_step(params: ParameterStore, state: AdamState, lr: float, cfg: TrainConfig) -> None:
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = p.data - (lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.data.dtype)


class _BatchFeed:
    """Batches produced by ``workers`` RNG streams; batch ``i`` always comes from stream ``i % workers``."""

    def __init__(self, dataset: Dataset, cfg: TrainConfig):
        self.dataset = dataset
        self.cfg = cfg
        self.rngs = [np.random.default_rng([cfg.seed, 1, w]) for w in range(cfg.workers)]
        self.i = 0
        self.threads = []
        self.stop = threading.Event()
        if cfg.workers > 1:
            self.queues = [queue.Queue(maxsize=2) for _ in range(cfg.workers)]
            for w in range(cfg.workers):
                t = threading.Thread(target=self._run, args=(w,), daemon=True)
                t.start()
                self.threads.append(t)

    def _draw(self, w: int):
        return self.dataset.sample_batch(self.cfg.batch_size, self.cfg.patch_size, self.rngs[w])

    def _run(self, w: int) -> None:
        while not self.stop.is_set():
            item = self._draw(w)
            while not self.stop.is_set():
                try:
                    self.queues[w].put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue

    def next(self):
        w = self.i % self.cfg.workers
        self.i += 1
        if self.cfg.workers == 1:
            return self._draw(0)
        return self.queues[w].get()

    def close(self) -> None:
        self.stop.set()
        for t in self.threads:
            t.join()


@dataclass
class TrainResult:
    model: Model
    state: AdamState
    iteration: int
    losses: list
    log_rows: list


def _largest_grad(params: ParameterStore) -> str:
    worst, name = -1.0, "?"
    for n, p in params.items():
        if p.grad is None:
            continue
        g = np.abs(p.grad)
        val = np.inf if not np.all(np.isfinite(g)) else float(g.max())
        if val > worst:
            worst, name = val, n
    return name


def train_step(model: Model, lr_batch: np.ndarray, hr_batch: np.ndarray) -> float:
    dtype = model.dtype
    pred = model(Tensor(lr_batch.astype(dtype)))
    loss = T.l1_loss(pred, Tensor(hr_batch.astype(dtype)))
    T.backward(loss, model.params.tensors())
    return float(loss.data)


def train(model: Model, dataset: Dataset, cfg: TrainConfig, out_dir=None,
          state: Optional[AdamState] = None, start_iteration: int = 0) -> TrainResult:
    """Run ``cfg.iterations`` optimizer steps of L1 training on random patches.

    With ``out_dir`` set, writes ``train_log.csv`` (iter,lr,loss), which is
    byte-identical across same-seed runs, wall-clock times in
    ``train_times.csv`` (iter,seconds), periodic ``iter_XXXXXXX.drsan`` checkpoints and ``final.drsan``.
    """
    if dataset.scale != model.config.scale:
        raise ValueError(f"dataset scale {dataset.scale} != model scale {model.config.scale}")
    state = state or AdamState.for_params(model.params)
    out = Path(out_dir) if out_dir is not None else None
    files, writer, timer = [], None, None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        files = [open(out / name, "w", newline="", encoding="utf-8") for name in ("train_log.csv", "train_times.csv")]
        writer, timer = (csv.writer(f, lineterminator="\n") for f in files)
        writer.writerow(["iter", "lr", "loss"])
        timer.writerow(["iter", "seconds"])
    feed = _BatchFeed(dataset, cfg)
    losses, rows = [], []
    start = time.perf_counter()
    it = start_iteration
    try:
        for it in range(start_iteration, start_iteration + cfg.iterations):
            lr_batch, hr_batch = feed.next()
            loss = train_step(model, lr_batch, hr_batch)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at iteration {it}; largest |grad| in {_largest_grad(model.params)}")
            lr = lr_at(it, cfg)
            adam_step(model.params, state, lr, cfg)
            losses.append(loss)
            done = it + 1
            last = done == start_iteration + cfg.iterations
            if cfg.log_every and (done % cfg.log_every == 0 or last):
                row = (done, lr, loss, time.perf_counter() - start)
                rows.append(row)
                log.info("iter %d lr %.3e loss %.6f", *row[:3])
                if writer is not None:
                    writer.writerow([done, repr(lr), repr(loss)])
                    timer.writerow([done, f"{row[3]:.3f}"])
                    for f in files:
                        f.flush()
            if out is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                save_checkpoint(model, out / f"iter_{done:07d}.drsan", done, state.to_optimizer_state())
        final_iter = start_iteration + cfg.iterations
        if out is not None:
            save_checkpoint(model, out / "final.drsan", final_iter, state.to_optimizer_state())
    finally:
        feed.close()
        for f in files:
            f.close()
    return TrainResult(model=model, state=state, iteration=start_iteration + cfg.iterations,
                       losses=losses, log_rows=rows)

"""SGD-with-momentum training loop and dataset evaluation."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from .data import Sample, crop_mask, pad_to_multiple
from .errors import ConfigError, NumericError
from .network import (Network, loss as net_loss, median_frequency_weights,
                      named_parameters, predict)
from .tensor import Rng, Tape, Tensor4, backward


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 2
    epochs: int = 30
    seed: int = 0
    shuffle: bool = True
    log_every: int = 50
    val_fraction: float = 0.1  # carve-out from training for per-epoch metrics

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


class OptimizerState:
    """Per-parameter velocity buffers, zero-initialized."""

    def __init__(self, params: list[tuple[str, Tensor4]]):
        self.velocity = {name: np.zeros_like(t.data) for name, t in params}


def sgdm_step(params: list[tuple[str, Tensor4]], state: OptimizerState,
              cfg: TrainConfig) -> None:
    """Classical momentum update: v <- mu*v - lr*g; w <- w + v."""
    for name, t in params:
        if t.grad is None:
            raise NumericError(f"parameter {name!r} has no gradient")
        v = state.velocity[name]
        v *= cfg.momentum
        v -= cfg.learning_rate * t.grad
        if not np.all(np.isfinite(v)):
            raise NumericError(f"non-finite velocity for parameter {name!r}")
        t.data += v


@dataclass
class TrainLog:
    steps: list[tuple[int, int, float, float]] = field(default_factory=list)  # epoch, step, loss, seconds
    epoch_metrics: list[tuple[int, M.MetricsReport]] = field(default_factory=list)

    def epoch_mean_loss(self, epoch: int) -> float:
        vals = [l for e, _, l, _ in self.steps if e == epoch]
        return float(np.mean(vals))

    def write_csv(self, path: str) -> None:
        with open(path, "w") as f:
            f.write("epoch,step,loss,seconds\n")
            for e, s, l, t in self.steps:
                f.write(f"{e},{s},{l:.10g},{t:.3f}\n")

    def write_metrics_csv(self, path: str) -> None:
        with open(path, "w") as f:
            f.write("epoch," + M.CSV_HEADER + "\n")
            for e, rep in self.epoch_metrics:
                for row in M.report_csv_rows(rep, f"epoch{e}"):
                    f.write(f"{e},{row}\n")


def _batch_tensors(samples: list[Sample]) -> tuple[Tensor4, np.ndarray]:
    imgs = np.stack([s.image.transpose(2, 0, 1) for s in samples])
    masks = np.stack([s.mask for s in samples])
    return Tensor4(imgs, validate=False), masks


def train(net: Network, train_set: list[Sample], val_set: list[Sample] | None,
          cfg: TrainConfig, log: TrainLog | None = None) -> tuple[Network, TrainLog]:
    """Train in place; returns the network in eval mode plus the log.

    Static-attention weights are computed once from the training split before
    the first epoch (sa-re-dae only). A NaN/Inf loss aborts after restoring
    the parameters of the last good step.
    """
    if not train_set:
        raise ConfigError("training set is empty")
    log = log or TrainLog()
    factor = net.encoders[0].pool.k ** len(net.encoders)
    padded = [pad_to_multiple(s, factor)[0] for s in train_set]

    if net.variant == "sa-re-dae":
        net.class_weights = median_frequency_weights([s.mask for s in padded], net.classes)

    params = named_parameters(net)
    state = OptimizerState(params)
    order_rng = Rng([cfg.seed, 0x0D0E])
    last_good = {name: t.data.copy() for name, t in params}
    t0 = time.monotonic()
    step_no = 0

    for epoch in range(1, cfg.epochs + 1):
        net.set_mode("train")
        order = list(range(len(padded)))
        if cfg.shuffle:
            order_rng.shuffle(order)
        for lo in range(0, len(order), cfg.batch_size):
            batch = [padded[i] for i in order[lo:lo + cfg.batch_size]]
            x, labels = _batch_tensors(batch)
            with Tape():
                l = net_loss(net, x, labels)
                lv = l.item()
                if not np.isfinite(lv):
                    for name, t in params:
                        t.data[...] = last_good[name]
                    raise NumericError(
                        f"non-finite loss {lv} at epoch {epoch} step {step_no}; "
                        "parameters restored to the last good step")
                backward(l)
            sgdm_step(params, state, cfg)
            for _, t in params:
                t.zero_grad()
            for name, t in params:
                last_good[name][...] = t.data
            step_no += 1
            log.steps.append((epoch, step_no, lv, time.monotonic() - t0))

        if val_set:
            net.set_mode("eval")
            rep, _ = evaluate(net, val_set)
            log.epoch_metrics.append((epoch, rep))

    net.set_mode("eval")
    return net, log


def carve_validation(train_ids: list[str], fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Deterministically reserve a fraction of the training ids for validation."""
    ids = list(train_ids)
    if fraction <= 0 or len(ids) < 2:
        return ids, []
    rng = Rng([seed, 0x7A1])
    rng.shuffle(ids)
    n_val = max(1, int(np.floor(fraction * len(ids) + 0.5)))
    return ids[n_val:], ids[:n_val]


def worker_threads() -> int:
    """Worker-thread cap: REDAE_THREADS env var, default available cores."""
    env = os.environ.get("REDAE_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"REDAE_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def evaluate(net: Network, samples: list[Sample]) -> tuple[M.MetricsReport, M.ConfusionCounts]:
    """Predict every sample and accumulate pixel confusion counts.

    Samples are scored independently (up to `worker_threads()` at a time) and
    the partial counts merged in sample order, so the result is deterministic.
    """
    if not samples:
        raise ConfigError("evaluation set is empty")
    net.set_mode("eval")
    factor = net.encoders[0].pool.k ** len(net.encoders)

    def score_one(s: Sample) -> M.ConfusionCounts:
        padded, crop = pad_to_multiple(s, factor)
        x, _ = _batch_tensors([padded])
        pred = crop_mask(predict(net, x)[0], crop)
        return M.accumulate(M.ConfusionCounts(net.classes), pred, s.mask)

    threads = worker_threads()
    if threads > 1 and len(samples) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(score_one, samples))
    else:
        partials = [score_one(s) for s in samples]

    counts = M.ConfusionCounts(net.classes)
    for p in partials:
        counts = counts.merge(p)
    return M.compute_report(counts), counts

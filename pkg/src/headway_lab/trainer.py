"""Mini-batch training loop with validation monitoring and early stopping.

Batch order is a pure function of (seed, epoch); gradients are averaged
over the batch in a fixed order, so two runs with identical seeds produce
identical histories and parameters.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .convlstm import (GradientError, ModelDims, ModelParams, adam_init,
                       adam_step, backward_batch, forward_batch, init_params,
                       mse_loss)
from .windowing import SampleSet

log = logging.getLogger("headway_lab.trainer")

IMPROVEMENT_DELTA = 1e-6  # val loss must drop by this much to reset patience


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.001
    patience: int = 50
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.patience) < 1 or self.learning_rate <= 0:
            raise TrainError("epochs, batch_size, patience and learning_rate must be positive")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0        # 1-based epoch with the lowest validation loss
    stopped_early: bool = False
    diverged: bool = False

    def n_epochs(self) -> int:
        return len(self.train_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_loss,val_loss\n")
        for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            buf.write(f"{i},{tr!r},{va!r}\n")
        return buf.getvalue()


class EarlyStopTracker:
    """Counts epochs without a strict improvement of at least
    IMPROVEMENT_DELTA; fires once the count reaches `patience`."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if val_loss < self.best - IMPROVEMENT_DELTA:
            self.best = val_loss
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def _stack_batch(samples):
    xb = np.stack([s.x[:, :, :, 0].transpose(0, 2, 1) for s in samples])
    tb = np.stack([s.t_future[:, :, 0] for s in samples])
    yb = np.stack([s.y[:, :, :, 0].transpose(0, 2, 1) for s in samples])
    return xb, tb, yb


def dataset_loss(params: ModelParams, sample_set: SampleSet, batch_size: int = 64) -> float:
    """Mean squared error over every cell of every sample (teacher-forced
    terminal channel)."""
    total, count = 0.0, 0
    for start in range(0, len(sample_set.samples), batch_size):
        chunk = sample_set.samples[start:start + batch_size]
        xb, tb, yb = _stack_batch(chunk)
        y_hat, _ = forward_batch(params, xb, tb)
        loss, _ = mse_loss(yb.astype(y_hat.dtype), y_hat)
        total += loss * yb.size
        count += yb.size
    return total / count


def infer_dims(sample_set: SampleSet, filters: int = 32) -> ModelDims:
    s = sample_set.samples[0]
    return ModelDims(
        n_distance_bins=s.x.shape[1],
        n_directions=s.x.shape[2],
        filters=filters,
        lookback=s.x.shape[0],
        horizon=s.y.shape[0],
    )


def train(train_set: SampleSet, val_set: SampleSet, config: TrainConfig,
          init_seed: int, filters: int = 32,
          initial_params: ModelParams | None = None) -> tuple[ModelParams, TrainHistory]:
    """Train and return the parameters of the best-validation epoch.

    On divergence (non-finite loss or gradient) training stops and the
    best finite parameters seen so far are returned with the history's
    diverged flag set.
    """
    if not train_set.samples or not val_set.samples:
        raise TrainError("train and validation sets must be non-empty")

    if initial_params is not None:
        params = initial_params.copy()
        dims = params.dims
    else:
        dims = infer_dims(train_set, filters=filters)
        params = init_params(dims, init_seed)
    state = adam_init(params)
    history = TrainHistory()
    tracker = EarlyStopTracker(config.patience)
    best_params = params.copy()
    n = len(train_set.samples)

    for epoch in range(1, config.epochs + 1):
        order_rng = np.random.Generator(np.random.PCG64([config.seed, epoch]))
        order = order_rng.permutation(n)

        epoch_sq_sum, epoch_count = 0.0, 0
        diverged = False
        for start in range(0, n, config.batch_size):
            batch = [train_set.samples[i] for i in order[start:start + config.batch_size]]
            xb, tb, yb = _stack_batch(batch)
            y_hat, cache = forward_batch(params, xb, tb)
            loss, d_y = mse_loss(yb.astype(y_hat.dtype), y_hat)
            if not math.isfinite(loss):
                diverged = True
                break
            try:
                grads = backward_batch(cache, d_y)
                params, state = adam_step(params, grads, state, config.learning_rate)
            except GradientError as exc:
                log.error("epoch %d: %s", epoch, exc)
                diverged = True
                break
            epoch_sq_sum += loss * yb.size
            epoch_count += yb.size

        if diverged or epoch_count == 0:
            history.diverged = True
            log.error("training diverged at epoch %d; returning best finite parameters", epoch)
            break

        train_loss = epoch_sq_sum / epoch_count
        val_loss = dataset_loss(params, val_set, batch_size=max(config.batch_size, 64))
        if not math.isfinite(val_loss):
            history.diverged = True
            log.error("validation loss non-finite at epoch %d", epoch)
            break
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)

        improved = val_loss < tracker.best - IMPROVEMENT_DELTA
        should_stop = tracker.update(epoch, val_loss)
        if improved:
            best_params = params.copy()
        if should_stop:
            history.stopped_early = True
            log.info("early stop at epoch %d (best %d)", epoch, tracker.best_epoch)
            break

    history.best_epoch = tracker.best_epoch if tracker.best_epoch else 1
    return best_params, history

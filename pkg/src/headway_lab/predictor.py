"""Single-shot and recursive prediction plus RMSE / R-squared evaluation.

Recursive prediction feeds each round's normalized output frames back into
the look-back window, so horizons beyond one forward pass are covered at
the cost of compounding error. Evaluation pools squared errors over every
cell from the anchor up to the requested horizon, per direction.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .common import DIRECTIONS
from .convlstm import ModelParams, ShapeError, forward_batch
from .grid import Scaler
from .windowing import SampleSet

__all__ = [
    "PredictionResult", "MetricsReport", "MetricRow", "predict_single",
    "predict_recursive", "evaluate", "station_scatter", "persistence_baseline",
    "rmse_r_squared", "metrics_to_csv", "scatter_to_csv",
]


class PredictError(ValueError):
    pass


@dataclass
class PredictionResult:
    y_hat: np.ndarray          # [F_total, N_d, 2, 1] seconds
    horizon_minutes: int
    anchor_time_bin: int | None = None


@dataclass
class MetricRow:
    direction: str
    horizon_min: int
    rmse_s: float
    r_squared: float
    n: int


@dataclass
class MetricsReport:
    rows: list[MetricRow] = field(default_factory=list)

    def row(self, direction: str, horizon_min: int) -> MetricRow:
        for r in self.rows:
            if r.direction == direction and r.horizon_min == horizon_min:
                return r
        raise KeyError((direction, horizon_min))


def _window_to_batch(x_window: np.ndarray) -> np.ndarray:
    if x_window.ndim != 4 or x_window.shape[3] != 1:
        raise ShapeError(f"x_window must be [L, N_d, 2, 1], got {x_window.shape}")
    return np.ascontiguousarray(x_window[None, :, :, :, 0].transpose(0, 1, 3, 2))


def _batch_to_frames(y: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(y[0].transpose(0, 2, 1))[:, :, :, None]


def _recursive_batch(params: ModelParams, xb: np.ndarray, tb_full: np.ndarray,
                     n_rounds: int, on_round=None) -> np.ndarray:
    """Normalized recursive prediction on engine-layout batches.

    xb: [B, L, 2, N_d]; tb_full: [B, n_rounds*F, 2]. Returns
    [B, n_rounds*F, 2, N_d].
    """
    F = params.dims.horizon
    L = params.dims.lookback
    window = xb
    outs = []
    for r in range(n_rounds):
        y, _ = forward_batch(params, window, tb_full[:, r * F:(r + 1) * F])
        outs.append(y)
        if on_round is not None:
            on_round(r, window, y)
        window = np.concatenate([window, y], axis=1)[:, -L:]
    return np.concatenate(outs, axis=1)


def predict_recursive(params: ModelParams, scaler: Scaler, x_window: np.ndarray,
                      terminal_plan: np.ndarray, n_rounds: int,
                      anchor_time_bin: int | None = None, delta_t_s: float = 60.0,
                      on_round=None) -> PredictionResult:
    """Chain n_rounds forward passes.

    x_window: [L, N_d, 2, 1] normalized history. terminal_plan:
    [n_rounds*F, 2] planned terminal headways in seconds, normalized here
    with the training scaler. Output frames are denormalized to seconds.
    The optional on_round(round, window, prediction) hook sees the
    engine-layout normalized arrays of each round.
    """
    if n_rounds < 1:
        raise PredictError("n_rounds must be >= 1")
    F = params.dims.horizon
    plan = np.asarray(terminal_plan, dtype=np.float64)
    if plan.shape != (n_rounds * F, params.dims.n_directions):
        raise PredictError(
            f"terminal plan must cover {n_rounds * F} bins x "
            f"{params.dims.n_directions} directions, got {plan.shape}")
    tb = scaler.scale(plan)[None].astype(np.float32)
    xb = _window_to_batch(x_window)
    y_norm = _recursive_batch(params, xb, tb, n_rounds, on_round=on_round)
    y_sec = scaler.unscale(_batch_to_frames(y_norm))
    return PredictionResult(
        y_hat=y_sec,
        horizon_minutes=int(round(n_rounds * F * delta_t_s / 60.0)),
        anchor_time_bin=anchor_time_bin,
    )


def predict_single(params: ModelParams, scaler: Scaler, x_window: np.ndarray,
                   terminal_plan: np.ndarray, anchor_time_bin: int | None = None,
                   delta_t_s: float = 60.0) -> PredictionResult:
    """One forward pass over the model's native horizon F."""
    return predict_recursive(params, scaler, x_window, terminal_plan, 1,
                             anchor_time_bin=anchor_time_bin, delta_t_s=delta_t_s)


def persistence_baseline(x_window: np.ndarray, horizon_bins: int) -> np.ndarray:
    """Naive forecast: repeat the window's last frame horizon_bins times."""
    last = x_window[-1:]
    return np.repeat(last, horizon_bins, axis=0)


# ---------------------------------------------------------------------------
# evaluation against ground truth

def _horizon_rounds(horizon_min: int, params: ModelParams, delta_t_s: float) -> int:
    round_min = params.dims.horizon * delta_t_s / 60.0
    rounds = horizon_min / round_min
    if abs(rounds - round(rounds)) > 1e-9 or rounds < 1:
        raise PredictError(
            f"horizon {horizon_min} min is not a multiple of the model's "
            f"{round_min:g} min step")
    return int(round(rounds))


def _collect_horizon_arrays(params: ModelParams, sample_set: SampleSet,
                            rounds: int, batch_size: int = 64):
    """Yield (truth_norm, pred_norm) engine-layout batches for anchors that
    have ground truth over `rounds` chained horizons."""
    F = params.dims.horizon
    by_rep: dict[int, dict[int, object]] = {}
    for s in sample_set.samples:
        by_rep.setdefault(s.replication_id, {})[s.anchor_time_bin] = s

    chains = []
    for rep in sorted(by_rep):
        anchors = by_rep[rep]
        for t in sorted(anchors):
            parts = [anchors.get(t + r * F) for r in range(rounds)]
            if all(p is not None for p in parts):
                chains.append(parts)
    if not chains:
        raise PredictError("sample set has no anchor with ground truth over "
                           f"{rounds * F} future bins")

    for start in range(0, len(chains), batch_size):
        chunk = chains[start:start + batch_size]
        xb = np.stack([c[0].x[:, :, :, 0].transpose(0, 2, 1) for c in chunk])
        tb = np.stack([
            np.concatenate([p.t_future[:, :, 0] for p in c], axis=0) for c in chunk])
        truth = np.stack([
            np.concatenate([p.y[:, :, :, 0].transpose(0, 2, 1) for p in c], axis=0)
            for c in chunk])
        pred = _recursive_batch(params, xb, tb, rounds)
        yield truth, pred


def rmse_r_squared(actual: np.ndarray, predicted: np.ndarray):
    """Pooled RMSE and coefficient of determination over all elements:
    R^2 = 1 - sum((y - y_hat)^2) / sum((y - mean(y))^2). Returns
    (rmse, r_squared, n)."""
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape:
        raise ShapeError(f"shape mismatch: {actual.shape} vs {predicted.shape}")
    diff = predicted - actual
    rmse = float(np.sqrt(np.mean(diff * diff)))
    ss_res = float(np.sum(diff * diff))
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan
    return rmse, r2, actual.size


def evaluate(params: ModelParams, scaler: Scaler, sample_set: SampleSet,
             horizons_min, delta_t_s: float = 60.0,
             distance_bins=None, batch_size: int = 64) -> MetricsReport:
    """Recursive predictions with ground-truth terminal plans, scored in
    seconds per (direction, horizon), pooled over all cells up to the
    horizon. `distance_bins` restricts scoring to those bins."""
    if not sample_set.samples:
        raise PredictError("sample set is empty")
    report = MetricsReport()
    for horizon_min in horizons_min:
        rounds = _horizon_rounds(horizon_min, params, delta_t_s)
        actual_parts = {k: [] for k in range(params.dims.n_directions)}
        pred_parts = {k: [] for k in range(params.dims.n_directions)}
        for truth, pred in _collect_horizon_arrays(params, sample_set, rounds, batch_size):
            if distance_bins is not None:
                truth = truth[:, :, :, distance_bins]
                pred = pred[:, :, :, distance_bins]
            for k in range(params.dims.n_directions):
                actual_parts[k].append(truth[:, :, k].ravel())
                pred_parts[k].append(pred[:, :, k].ravel())
        for k, direction in enumerate(DIRECTIONS):
            actual = scaler.unscale(np.concatenate(actual_parts[k]))
            predicted = scaler.unscale(np.concatenate(pred_parts[k]))
            rmse, r2, n = rmse_r_squared(actual, predicted)
            report.rows.append(MetricRow(direction, int(horizon_min), rmse, r2, n))
    return report


@dataclass
class ScatterReport:
    distance_bin: int
    pairs: dict          # (direction, horizon_min) -> (actual_s, predicted_s) arrays
    rmse: dict           # (direction, horizon_min) -> seconds


def station_scatter(params: ModelParams, scaler: Scaler, sample_set: SampleSet,
                    distance_bin: int, horizons_min,
                    delta_t_s: float = 60.0) -> ScatterReport:
    """Actual/predicted pairs at a single distance bin, per horizon."""
    if not 0 <= distance_bin < params.dims.n_distance_bins:
        raise PredictError(f"distance_bin {distance_bin} out of range")
    pairs, rmse = {}, {}
    for horizon_min in horizons_min:
        rounds = _horizon_rounds(horizon_min, params, delta_t_s)
        actual_parts = {k: [] for k in range(params.dims.n_directions)}
        pred_parts = {k: [] for k in range(params.dims.n_directions)}
        for truth, pred in _collect_horizon_arrays(params, sample_set, rounds):
            for k in range(params.dims.n_directions):
                actual_parts[k].append(truth[:, :, k, distance_bin].ravel())
                pred_parts[k].append(pred[:, :, k, distance_bin].ravel())
        for k, direction in enumerate(DIRECTIONS):
            actual = scaler.unscale(np.concatenate(actual_parts[k]))
            predicted = scaler.unscale(np.concatenate(pred_parts[k]))
            pairs[(direction, int(horizon_min))] = (actual, predicted)
            rmse[(direction, int(horizon_min))] = float(
                np.sqrt(np.mean((predicted - actual) ** 2)))
    return ScatterReport(distance_bin, pairs, rmse)


# ---------------------------------------------------------------------------
# exports

def metrics_to_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    buf.write("direction,horizon_min,rmse_s,r2,n\n")
    for r in report.rows:
        buf.write(f"{r.direction},{r.horizon_min},{r.rmse_s!r},{r.r_squared!r},{r.n}\n")
    return buf.getvalue()


def scatter_to_csv(report: ScatterReport) -> str:
    buf = io.StringIO()
    buf.write("direction,horizon_min,actual_s,predicted_s\n")
    for (direction, horizon), (actual, predicted) in sorted(report.pairs.items()):
        for a, p in zip(actual, predicted):
            buf.write(f"{direction},{horizon},{float(a)!r},{float(p)!r}\n")
    return buf.getvalue()

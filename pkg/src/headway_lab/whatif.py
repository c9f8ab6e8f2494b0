"""Dispatcher strategy engine: build terminal headway plans and compare
their predicted downstream effect against a baseline.

A plan is a per-future-bin sequence of terminal departure headways for one
direction. Validation is total: any entry below the minimum safe headway
is rejected at construction, so no infeasible plan reaches the predictor.
Downstream regularity is summarized as the per-distance-bin coefficient
of variation of the predicted headways over the horizon.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .common import DIRECTIONS, direction_index
from .convlstm import ModelParams
from .grid import Scaler
from .predictor import predict_recursive

DEFAULT_MIN_HEADWAY_S = 120.0


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class TerminalPlan:
    direction: str
    headways: tuple[float, ...]   # seconds, one per future time bin
    label: str = ""

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise PlanError(f"direction must be one of {DIRECTIONS}")
        object.__setattr__(self, "headways", tuple(float(h) for h in self.headways))
        if not self.headways:
            raise PlanError("plan must cover at least one time bin")

    def to_dict(self) -> dict:
        return {"direction": self.direction, "label": self.label,
                "headways_s": list(self.headways)}


def _check_entries(headways, min_headway: float) -> None:
    bad = [(i, h) for i, h in enumerate(headways)
           if not math.isfinite(h) or h < min_headway]
    if bad:
        detail = ", ".join(f"[{i}]={h:g}s" for i, h in bad[:8])
        raise PlanError(
            f"{len(bad)} plan entries below the minimum safe headway "
            f"{min_headway:g}s: {detail}")


def plan_even(target_headway: float, horizon_bins: int, direction: str = "NB",
              min_headway: float = DEFAULT_MIN_HEADWAY_S, label: str = "even") -> TerminalPlan:
    """Constant plan holding the terminal at one target headway."""
    if horizon_bins < 1:
        raise PlanError("horizon_bins must be >= 1")
    _check_entries([target_headway], min_headway)
    return TerminalPlan(direction, (target_headway,) * horizon_bins, label)


def plan_holding(observed_terminal_headways, horizon_bins: int, direction: str = "NB",
                 min_headway: float = DEFAULT_MIN_HEADWAY_S,
                 label: str = "holding") -> TerminalPlan:
    """Hold-back strategy: even out the projected terminal headways.

    The observed headways are projected over the horizon by cycling them;
    each plan entry is the elementwise max of the projection and the
    projection's running average over the full horizon. Holding can only
    delay a departure, so every entry dominates its projection (and the
    plan's variance never exceeds the projection's). Entries are lifted to
    the minimum safe headway if the observations sit below it.
    """
    obs = [float(h) for h in observed_terminal_headways]
    if not obs:
        raise PlanError("plan_holding needs at least one observed headway")
    if horizon_bins < 1:
        raise PlanError("horizon_bins must be >= 1")
    projection = [obs[i % len(obs)] for i in range(horizon_bins)]
    smoothed = sum(projection) / len(projection)
    headways = [max(p, smoothed, min_headway) for p in projection]
    return TerminalPlan(direction, tuple(headways), label)


def plan_custom(pattern, direction: str = "NB",
                min_headway: float = DEFAULT_MIN_HEADWAY_S,
                label: str = "custom") -> TerminalPlan:
    """Pass an explicit per-bin pattern through validation."""
    pattern = [float(h) for h in pattern]
    if not pattern:
        raise PlanError("custom plan pattern is empty")
    _check_entries(pattern, min_headway)
    return TerminalPlan(direction, tuple(pattern), label)


def load_plan(path: str, min_headway: float = DEFAULT_MIN_HEADWAY_S) -> TerminalPlan:
    with open(path, encoding="utf-8") as fh:
        body = json.load(fh)
    return plan_custom(body["headways_s"], direction=body["direction"],
                       min_headway=min_headway, label=body.get("label", ""))


# ---------------------------------------------------------------------------
# plan comparison

@dataclass
class PlanOutcome:
    plan: TerminalPlan
    grid_seconds: np.ndarray   # [H, N_d, 2, 1]
    cv_per_bin: np.ndarray     # [N_d, 2] std/mean over the horizon
    mean_per_bin: np.ndarray   # [N_d, 2] seconds
    cv_delta: np.ndarray       # vs. baseline
    mean_delta: np.ndarray


@dataclass
class ComparisonReport:
    baseline_index: int
    outcomes: list[PlanOutcome] = field(default_factory=list)


def _coefficient_of_variation(grid_seconds: np.ndarray):
    """Per (distance bin, direction) std/mean of predicted headways over
    the horizon axis. Means are positive whenever the scaler's h_min is."""
    frames = grid_seconds[:, :, :, 0]
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    cv = np.divide(std, mean, out=np.zeros_like(std), where=mean > 1e-12)
    return cv, mean


def compare_plans(params: ModelParams, scaler: Scaler, x_window: np.ndarray,
                  plans: list[TerminalPlan], baseline_index: int,
                  other_direction_headways=None,
                  delta_t_s: float = 60.0) -> ComparisonReport:
    """Predict once per plan from the same look-back window and report
    per-bin regularity (CV) and mean deltas against the baseline plan.

    Plans cover the adjusted direction; the opposite direction's terminal
    channel comes from `other_direction_headways` (seconds, same length)
    or, by default, persists the window's last observed value at that
    terminal. Plan lengths must be a multiple of the model horizon F;
    longer plans run recursively.
    """
    if not plans:
        raise PlanError("no plans given")
    if not 0 <= baseline_index < len(plans):
        raise PlanError(f"baseline_index {baseline_index} out of range")
    directions = {p.direction for p in plans}
    if len(directions) != 1:
        raise PlanError("all plans must target the same direction")
    lengths = {len(p.headways) for p in plans}
    if len(lengths) != 1:
        raise PlanError("all plans must cover the same horizon")
    horizon_bins = lengths.pop()
    F = params.dims.horizon
    if horizon_bins % F != 0:
        raise PlanError(f"plan length {horizon_bins} is not a multiple of the "
                        f"model horizon {F}")
    rounds = horizon_bins // F
    k_adj = direction_index(directions.pop())
    k_other = 1 - k_adj

    if other_direction_headways is None:
        # persist the last observed terminal headway of the other direction
        last_norm = float(x_window[-1, 0, k_other, 0])
        other = np.full(horizon_bins, scaler.unscale(last_norm))
    else:
        other = np.asarray([float(h) for h in other_direction_headways])
        if other.shape != (horizon_bins,):
            raise PlanError("other_direction_headways must match the plan length")

    outcomes = []
    for plan in plans:
        t_plan = np.zeros((horizon_bins, 2))
        t_plan[:, k_adj] = plan.headways
        t_plan[:, k_other] = other
        result = predict_recursive(params, scaler, x_window, t_plan, rounds,
                                   delta_t_s=delta_t_s)
        cv, mean = _coefficient_of_variation(result.y_hat)
        outcomes.append(PlanOutcome(plan, result.y_hat, cv, mean,
                                    np.zeros_like(cv), np.zeros_like(mean)))

    base = outcomes[baseline_index]
    for outcome in outcomes:
        outcome.cv_delta = outcome.cv_per_bin - base.cv_per_bin
        outcome.mean_delta = outcome.mean_per_bin - base.mean_per_bin
    return ComparisonReport(baseline_index, outcomes)


def report_to_dict(report: ComparisonReport) -> dict:
    """JSON-ready view of a comparison (grids as nested lists, seconds)."""
    return {
        "baseline_index": report.baseline_index,
        "plans": [
            {
                **o.plan.to_dict(),
                "predicted_s": o.grid_seconds[:, :, :, 0].tolist(),
                "cv_per_bin": o.cv_per_bin.tolist(),
                "mean_per_bin_s": o.mean_per_bin.tolist(),
                "cv_delta": o.cv_delta.tolist(),
                "mean_delta_s": o.mean_delta.tolist(),
            }
            for o in report.outcomes
        ],
    }

"""Trajectory events -> dense time x distance x direction headway grids.

Pipeline: enrich events with same-block successive-activation headways,
bin them onto a (time, distance, direction) grid of cell means, fill the
unobserved cells, and min-max scale. Unobserved cells use NaN as an
internal sentinel that never leaves this module.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .common import DIRECTIONS, direction_index
from .sim import TrajectoryEvent, TrajectoryLog

log = logging.getLogger("headway_lab.grid")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Binning parameters: uniform time bins over [t_start, t_end) and
    uniform distance bins over [d_min, d_max]."""

    t_start: float
    t_end: float
    delta_t: float
    n_distance_bins: int
    d_min: float
    d_max: float
    n_directions: int = 2

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise GridError("t_start must precede t_end")
        if self.delta_t <= 0:
            raise GridError("delta_t must be positive")
        span = self.t_end - self.t_start
        if abs(span / self.delta_t - round(span / self.delta_t)) > 1e-9:
            raise GridError("(t_end - t_start) must be divisible by delta_t")
        if self.n_distance_bins < 1:
            raise GridError("n_distance_bins must be >= 1")
        if self.d_min >= self.d_max:
            raise GridError("d_min must be below d_max")
        if self.n_directions != 2:
            raise GridError("exactly two directions are supported")

    @property
    def n_time_bins(self) -> int:
        return int(round((self.t_end - self.t_start) / self.delta_t))

    @property
    def bin_width(self) -> float:
        return (self.d_max - self.d_min) / self.n_distance_bins

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def time_bin(t: float, spec: GridSpec) -> int:
    """Index of the time bin containing t; the window is half-open so
    t == t_end is out of range."""
    if not (spec.t_start <= t < spec.t_end):
        raise GridError(f"timestamp {t} outside [{spec.t_start}, {spec.t_end})")
    return int(math.floor((t - spec.t_start) / spec.delta_t))


def distance_bin(d: float, spec: GridSpec) -> int:
    """Index of the distance bin containing d; d == d_max maps to the last bin."""
    if not (spec.d_min <= d <= spec.d_max):
        raise GridError(f"distance {d} outside [{spec.d_min}, {spec.d_max}]")
    j = int(math.floor((d - spec.d_min) / spec.bin_width))
    return min(j, spec.n_distance_bins - 1)


@dataclass
class HeadwayGrid:
    spec: GridSpec
    values: np.ndarray          # [n_time_bins, n_distance_bins, 2] seconds (or normalized)
    observed_mask: np.ndarray   # True where at least one event landed

    def copy(self) -> "HeadwayGrid":
        return HeadwayGrid(self.spec, self.values.copy(), self.observed_mask.copy())


@dataclass(frozen=True)
class Scaler:
    """Min-max bounds in seconds, fit on training grids."""

    h_min: float
    h_max: float

    def __post_init__(self):
        if not self.h_min < self.h_max:
            raise GridError("scaler requires h_min < h_max")

    def scale(self, x):
        return (np.asarray(x, dtype=np.float64) - self.h_min) / (self.h_max - self.h_min)

    def unscale(self, x):
        return np.asarray(x, dtype=np.float64) * (self.h_max - self.h_min) + self.h_min


@dataclass
class RasterReport:
    """Events that could not be binned, with the reason per event."""

    rejected: list[tuple[TrajectoryEvent, str]]

    def count(self, reason: str | None = None) -> int:
        if reason is None:
            return len(self.rejected)
        return sum(1 for _, r in self.rejected if r == reason)


@dataclass
class ImputeReport:
    """Columns with zero observations, filled with the grid-wide mean."""

    empty_columns: list[tuple[int, int]]
    grid_mean: float


def compute_headways(log_in: TrajectoryLog) -> TrajectoryLog:
    """Return a new log where each event carries the gap to the previous
    activation of the same (block, direction) by a different train.

    The first activation of each (block, direction) keeps a null headway
    and is skipped at rasterization.
    """
    groups: dict[tuple[str, int], list[TrajectoryEvent]] = {}
    for ev in log_in.events:
        groups.setdefault((ev.direction, ev.block_id), []).append(ev)

    enriched: list[TrajectoryEvent] = []
    for group in groups.values():
        group.sort(key=lambda e: e.timestamp)
        for i, ev in enumerate(group):
            headway = None
            for j in range(i - 1, -1, -1):
                if group[j].train_id != ev.train_id:
                    headway = ev.timestamp - group[j].timestamp
                    break
            enriched.append(replace(ev, headway=headway))
    enriched.sort(key=lambda e: (e.timestamp, e.direction, e.train_id, e.block_id))
    return TrajectoryLog(log_in.replication_id, enriched, log_in.config_digest)


def rasterize(events, spec: GridSpec) -> tuple[HeadwayGrid, RasterReport]:
    """Mean headway per grid cell. Events that fall outside the spec's
    window or distance range (or carry no headway) are returned in the
    report instead of being dropped silently."""
    sums = np.zeros((spec.n_time_bins, spec.n_distance_bins, spec.n_directions))
    counts = np.zeros_like(sums, dtype=np.int64)
    rejected: list[tuple[TrajectoryEvent, str]] = []

    for ev in events:
        if ev.headway is None:
            rejected.append((ev, "null_headway"))
            continue
        if not (spec.t_start <= ev.timestamp < spec.t_end):
            rejected.append((ev, "time_out_of_range"))
            continue
        if not (spec.d_min <= ev.distance <= spec.d_max):
            rejected.append((ev, "distance_out_of_range"))
            continue
        t = time_bin(ev.timestamp, spec)
        j = distance_bin(ev.distance, spec)
        k = direction_index(ev.direction)
        sums[t, j, k] += ev.headway
        counts[t, j, k] += 1

    mask = counts > 0
    values = np.full(sums.shape, np.nan)
    np.divide(sums, counts, out=values, where=mask)
    return HeadwayGrid(spec, values, mask), RasterReport(rejected)


def impute_missing(grid: HeadwayGrid) -> tuple[HeadwayGrid, ImputeReport]:
    """Fill unobserved cells per (distance, direction) column: carry the
    last observed headway forward in time, back-fill leading gaps from the
    first observation, and give fully empty columns the grid-wide mean.

    Observed cells are never altered. Raises GridError when the grid has
    no observations at all.
    """
    values = grid.values.copy()
    mask = grid.observed_mask
    if not mask.any():
        raise GridError("no observations")
    grid_mean = float(values[mask].mean())

    empty_columns = []
    n_t = grid.spec.n_time_bins
    for k in range(grid.spec.n_directions):
        for j in range(grid.spec.n_distance_bins):
            col = values[:, j, k]
            obs = np.flatnonzero(mask[:, j, k])
            if obs.size == 0:
                col[:] = grid_mean
                empty_columns.append((j, k))
                continue
            col[: obs[0]] = col[obs[0]]
            last = obs[0]
            for t in range(obs[0] + 1, n_t):
                if mask[t, j, k]:
                    last = t
                else:
                    col[t] = col[last]
    out = HeadwayGrid(grid.spec, values, mask.copy())
    if empty_columns:
        log.info("imputed %d fully-empty columns with grid mean %.1f s",
                 len(empty_columns), grid_mean)
    return out, ImputeReport(empty_columns, grid_mean)


def grid_from_log(log_in: TrajectoryLog, spec: GridSpec):
    """Full pipeline for one replication: headways, raster, imputation.

    Returns (grid, raster_report, impute_report). Events outside the grid
    window (e.g. warm-up traffic before t_start) end up in the raster
    report; callers decide whether that is expected trimming.
    """
    enriched = compute_headways(log_in)
    with_headway = [ev for ev in enriched.events if ev.headway is not None]
    raw, raster_report = rasterize(with_headway, spec)
    grid, impute_report = impute_missing(raw)
    return grid, raster_report, impute_report


def fit_scaler(grids) -> Scaler:
    """Min-max bounds over every cell of the given imputed grids."""
    if not grids:
        raise GridError("fit_scaler needs at least one grid")
    h_min = min(float(g.values.min()) for g in grids)
    h_max = max(float(g.values.max()) for g in grids)
    if h_min == h_max:
        raise GridError("cannot fit scaler on constant data")
    return Scaler(h_min, h_max)


def normalize(grid: HeadwayGrid, scaler: Scaler) -> HeadwayGrid:
    return HeadwayGrid(grid.spec, scaler.scale(grid.values), grid.observed_mask.copy())


def denormalize(grid: HeadwayGrid, scaler: Scaler) -> HeadwayGrid:
    return HeadwayGrid(grid.spec, scaler.unscale(grid.values), grid.observed_mask.copy())


def default_grid_spec(**overrides) -> GridSpec:
    """150 one-minute bins over the 15:30-18:00 peak, 64 distance bins."""
    fields = dict(t_start=55800.0, t_end=64800.0, delta_t=60.0,
                  n_distance_bins=64, d_min=0.0, d_max=140800.0)
    fields.update(overrides)
    return GridSpec(**fields)


# ---------------------------------------------------------------------------
# grid directory format: one CSV per (replication, direction) + JSON sidecar

SIDECAR_NAME = "gridspec.json"


def _grid_csv_name(rep_id: int, direction: str) -> str:
    return f"grid_r{rep_id:03d}_{direction}.csv"


def save_grid_dir(out_dir: str, grids: dict[int, HeadwayGrid], scaler: Scaler,
                  split: dict | None = None) -> None:
    """Write grids in seconds plus a sidecar with the spec, scaler and an
    optional train/validation replication split."""
    os.makedirs(out_dir, exist_ok=True)
    spec = None
    for rep_id, grid in sorted(grids.items()):
        spec = grid.spec
        for k, direction in enumerate(DIRECTIONS):
            path = os.path.join(out_dir, _grid_csv_name(rep_id, direction))
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["time_bin", "distance_bin", "headway_s", "observed"])
            for t in range(spec.n_time_bins):
                for j in range(spec.n_distance_bins):
                    writer.writerow([t, j, repr(float(grid.values[t, j, k])),
                                     int(grid.observed_mask[t, j, k])])
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(buf.getvalue())
    sidecar = {
        "grid_spec": spec.to_dict(),
        "scaler": {"h_min": scaler.h_min, "h_max": scaler.h_max},
        "replications": sorted(grids),
    }
    if split is not None:
        sidecar["split"] = split
    with open(os.path.join(out_dir, SIDECAR_NAME), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_grid_dir(in_dir: str):
    """Read a grid directory back: (grids by replication, scaler, sidecar dict)."""
    sidecar_path = os.path.join(in_dir, SIDECAR_NAME)
    with open(sidecar_path, encoding="utf-8") as fh:
        sidecar = json.load(fh)
    spec = GridSpec(**sidecar["grid_spec"])
    scaler = Scaler(**sidecar["scaler"])
    grids = {}
    for rep_id in sidecar["replications"]:
        values = np.full((spec.n_time_bins, spec.n_distance_bins, spec.n_directions), np.nan)
        mask = np.zeros(values.shape, dtype=bool)
        for k, direction in enumerate(DIRECTIONS):
            path = os.path.join(in_dir, _grid_csv_name(rep_id, direction))
            with open(path, encoding="utf-8") as fh:
                reader = csv.reader(fh)
                header = next(reader)
                if header != ["time_bin", "distance_bin", "headway_s", "observed"]:
                    raise GridError(f"unexpected grid CSV header in {path}")
                for row in reader:
                    t, j = int(row[0]), int(row[1])
                    values[t, j, k] = float(row[2])
                    mask[t, j, k] = row[3] == "1"
        if np.isnan(values).any():
            raise GridError(f"grid for replication {rep_id} has missing cells")
        grids[rep_id] = HeadwayGrid(spec, values, mask)
    return grids, scaler, sidecar

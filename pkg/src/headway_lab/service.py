"""HTTP facade for the dispatcher console.

Loads one checkpoint and one grid directory at startup into an immutable
snapshot; every request handler reads that snapshot, so concurrent
prediction and what-if calls cannot observe partial state. JSON in, JSON
out; arrays are nested number lists (desk scale).

Status codes: 400 malformed request, 404 unknown replication, 422 invariant
violation (bad anchor, plan below the minimum headway, wrong shapes),
500 internal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint
from .common import DIRECTIONS, direction_index, opposite_direction
from .grid import HeadwayGrid, load_grid_dir
from .predictor import PredictError, predict_recursive
from .whatif import (DEFAULT_MIN_HEADWAY_S, PlanError, compare_plans,
                     plan_custom, report_to_dict)

log = logging.getLogger("headway_lab.service")


@dataclass(frozen=True)
class SessionState:
    checkpoint: Checkpoint
    grids: dict[int, HeadwayGrid]
    min_headway_s: float

    @property
    def lookback(self) -> int:
        return self.checkpoint.window.lookback

    @property
    def horizon(self) -> int:
        return self.checkpoint.params.dims.horizon


def load_session(checkpoint_path: str, grid_dir: str,
                 min_headway_s: float = DEFAULT_MIN_HEADWAY_S) -> SessionState:
    checkpoint = load_checkpoint(checkpoint_path)
    grids, _, _ = load_grid_dir(grid_dir)
    dims = checkpoint.params.dims
    for rep_id, grid in grids.items():
        if grid.spec.n_distance_bins != dims.n_distance_bins:
            raise ValueError(f"grid {rep_id} has {grid.spec.n_distance_bins} "
                             f"distance bins, model expects {dims.n_distance_bins}")
    return SessionState(checkpoint, grids, min_headway_s)


class PlanBody(BaseModel):
    direction: str
    headways_s: list[float]
    label: str = ""


class PredictRequest(BaseModel):
    replication: int | None = None
    anchor: int | None = None
    window: list | None = None          # [L][N_d][2] seconds
    terminal_plans: dict[str, list[float]] | None = None
    rounds: int = 1


class WhatifRequest(BaseModel):
    replication: int | None = None
    anchor: int | None = None
    window: list | None = None
    plans: list[PlanBody]
    baseline_index: int = 0


def _resolve_window(state: SessionState, replication, anchor, window):
    """Returns (x_norm [L, N_d, 2, 1], grid or None, anchor or None)."""
    ckpt = state.checkpoint
    dims = ckpt.params.dims
    L = state.lookback
    if window is not None:
        arr = np.asarray(window, dtype=np.float64)
        if arr.shape != (L, dims.n_distance_bins, dims.n_directions):
            raise HTTPException(422, detail=f"window must be [{L}][{dims.n_distance_bins}]"
                                            f"[{dims.n_directions}] seconds, got {list(arr.shape)}")
        return ckpt.scaler.scale(arr)[:, :, :, None].astype(np.float32), None, anchor
    if replication is None or anchor is None:
        raise HTTPException(422, detail="provide either window or replication+anchor")
    grid = state.grids.get(replication)
    if grid is None:
        raise HTTPException(404, detail=f"unknown replication {replication}")
    n_t = grid.spec.n_time_bins
    if not L <= anchor <= n_t:
        raise HTTPException(422, detail=f"anchor must be in [{L}, {n_t}]")
    window_sec = grid.values[anchor - L:anchor]
    return ckpt.scaler.scale(window_sec)[:, :, :, None].astype(np.float32), grid, anchor


def _terminal_plan(state: SessionState, grid, anchor, terminal_plans,
                   horizon_bins: int, x_norm) -> np.ndarray:
    """Planned terminal headways [horizon_bins, 2] in seconds: explicit plans
    win, then ground truth (grid sources), then persistence of the window's
    last terminal values."""
    ckpt = state.checkpoint
    terminal_bins = (ckpt.window.terminal_bin_nb, ckpt.window.terminal_bin_sb)
    plan = np.zeros((horizon_bins, 2))
    for k, direction in enumerate(DIRECTIONS):
        given = (terminal_plans or {}).get(direction)
        if given is not None:
            if len(given) != horizon_bins:
                raise HTTPException(422, detail=f"terminal plan for {direction} must "
                                                f"cover {horizon_bins} bins")
            plan[:, k] = given
        elif grid is not None and anchor is not None and \
                anchor + horizon_bins <= grid.spec.n_time_bins:
            plan[:, k] = grid.values[anchor:anchor + horizon_bins, terminal_bins[k], k]
        else:
            last = float(x_norm[-1, terminal_bins[k], k, 0])
            plan[:, k] = float(ckpt.scaler.unscale(last))
    return plan


def create_app(checkpoint_path: str, grid_dir: str,
               min_headway_s: float = DEFAULT_MIN_HEADWAY_S) -> FastAPI:
    state = load_session(checkpoint_path, grid_dir, min_headway_s)
    app = FastAPI(title="headway-lab service", version=__version__)
    app.state.session = state
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.exception_handler(RequestValidationError)
    async def malformed(_req: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/model")
    def model_info():
        ckpt = state.checkpoint
        return {
            "dims": ckpt.params.dims.to_dict(),
            "window": ckpt.window.to_dict(),
            "scaler": {"h_min": ckpt.scaler.h_min, "h_max": ckpt.scaler.h_max},
            "delta_t_s": ckpt.delta_t_s,
            "min_headway_s": state.min_headway_s,
            "digest": ckpt.digest,
            "epoch": ckpt.epoch,
            "version": __version__,
        }

    @app.get("/replications")
    def replications():
        any_grid = next(iter(state.grids.values()), None)
        return {
            "replications": sorted(state.grids),
            "n_time_bins": any_grid.spec.n_time_bins if any_grid else 0,
            "lookback": state.lookback,
            "horizon": state.horizon,
        }

    @app.get("/replications/{rep_id}/window")
    def window(rep_id: int, anchor: int):
        grid = state.grids.get(rep_id)
        if grid is None:
            raise HTTPException(404, detail=f"unknown replication {rep_id}")
        L = state.lookback
        if not L <= anchor <= grid.spec.n_time_bins:
            raise HTTPException(422, detail=f"anchor must be in [{L}, {grid.spec.n_time_bins}]")
        window_sec = grid.values[anchor - L:anchor]
        return {
            "replication_id": rep_id,
            "anchor_time_bin": anchor,
            "start_time_bin": anchor - L,
            "seconds": window_sec.tolist(),
        }

    @app.post("/predict")
    def predict(req: PredictRequest):
        if req.rounds < 1:
            raise HTTPException(422, detail="rounds must be >= 1")
        x_norm, grid, anchor = _resolve_window(state, req.replication, req.anchor,
                                               req.window)
        horizon_bins = req.rounds * state.horizon
        plan = _terminal_plan(state, grid, anchor, req.terminal_plans,
                              horizon_bins, x_norm)
        try:
            result = predict_recursive(state.checkpoint.params, state.checkpoint.scaler,
                                       x_norm, plan, req.rounds,
                                       anchor_time_bin=anchor,
                                       delta_t_s=state.checkpoint.delta_t_s)
        except PredictError as exc:
            raise HTTPException(422, detail=str(exc)) from exc
        return {
            "anchor_time_bin": anchor,
            "horizon_bins": horizon_bins,
            "horizon_minutes": result.horizon_minutes,
            "seconds": result.y_hat[:, :, :, 0].tolist(),
        }

    @app.post("/whatif")
    def whatif(req: WhatifRequest):
        if not req.plans:
            raise HTTPException(422, detail="at least one plan is required")
        x_norm, grid, anchor = _resolve_window(state, req.replication, req.anchor,
                                               req.window)
        try:
            plans = [plan_custom(p.headways_s, direction=p.direction,
                                 min_headway=state.min_headway_s,
                                 label=p.label or f"plan{i}")
                     for i, p in enumerate(req.plans)]
            horizon_bins = len(plans[0].headways)
            other = None
            k_other = direction_index(opposite_direction(plans[0].direction))
            terminal_bins = (state.checkpoint.window.terminal_bin_nb,
                             state.checkpoint.window.terminal_bin_sb)
            if grid is not None and anchor is not None and \
                    anchor + horizon_bins <= grid.spec.n_time_bins:
                other = grid.values[anchor:anchor + horizon_bins,
                                    terminal_bins[k_other], k_other]
            report = compare_plans(state.checkpoint.params, state.checkpoint.scaler,
                                   x_norm, plans, baseline_index=req.baseline_index,
                                   other_direction_headways=other,
                                   delta_t_s=state.checkpoint.delta_t_s)
        except (PlanError, PredictError) as exc:
            raise HTTPException(422, detail=str(exc)) from exc
        body = report_to_dict(report)
        body["anchor_time_bin"] = anchor
        return body

    return app


def serve(checkpoint_path: str, grid_dir: str, port: int = 8000) -> None:
    """Blocking entry point used by the CLI's serve subcommand."""
    import uvicorn

    app = create_app(checkpoint_path, grid_dir)
    log.info("serving on port %d", port)
    uvicorn.run(app, host="0.0.0.0", port=port, log_level="warning")

"""Command-line entry point: simulate, preprocess, train, evaluate,
predict, whatif, export-scatter, serve.

Configuration comes from JSON files with flag overrides (flags win). Every
command writes a run manifest next to its outputs recording the resolved
configuration, inputs, outputs, seed and wall-clock duration.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .common import (DIRECTIONS, configure_logging, direction_index,
                     dump_json_atomic, opposite_direction)
from .grid import (default_grid_spec, fit_scaler, grid_from_log,
                   load_grid_dir, normalize, save_grid_dir)
from .predictor import (evaluate, metrics_to_csv, predict_recursive,
                        scatter_to_csv, station_scatter)
from .sim import default_line_config, generate_dataset, load_line_config, log_to_csv, logs_from_csv
from .trainer import TrainConfig, train
from .whatif import compare_plans, load_plan, report_to_dict
from .windowing import (SampleSet, WindowSpec, extract_samples,
                        validation_ids_for_split)

log = logging.getLogger("headway_lab.cli")


class CliError(Exception):
    pass


def _write_manifest(out_dir: str, command: str, config: dict, inputs: list,
                    outputs: list, seed, started: float) -> None:
    dump_json_atomic(os.path.join(out_dir, f"manifest_{command}.json"), {
        "command": command,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "version": __version__,
        "duration_s": round(time.time() - started, 3),
    })


def _load_grids_and_checkpoint(args):
    ckpt = load_checkpoint(args.checkpoint)
    grids, scaler, sidecar = load_grid_dir(args.grids)
    if abs(scaler.h_min - ckpt.scaler.h_min) > 1e-9 or abs(scaler.h_max - ckpt.scaler.h_max) > 1e-9:
        log.info("grid-directory scaler differs from checkpoint scaler; "
                 "using the checkpoint's")
    return ckpt, grids, sidecar


def _window_from_grid(grid, ckpt, anchor: int):
    L = ckpt.window.lookback
    n_t = grid.spec.n_time_bins
    if not L <= anchor <= n_t:
        raise CliError(f"anchor must be in [{L}, {n_t}], got {anchor}")
    window_sec = grid.values[anchor - L:anchor]
    return ckpt.scaler.scale(window_sec)[:, :, :, None].astype(np.float32)


def _select_samples(grids, ckpt, sidecar, which: str) -> SampleSet:
    split = sidecar.get("split", {})
    val_ids = set(split.get("validation_ids", []))
    chosen = []
    for rep_id, grid in sorted(grids.items()):
        in_val = rep_id in val_ids
        if which == "validation" and not in_val:
            continue
        if which == "train" and in_val:
            continue
        norm = normalize(grid, ckpt.scaler)
        chosen += extract_samples(norm, ckpt.window, replication_id=rep_id)
    if not chosen:
        raise CliError(f"no samples in split {which!r}; check the grid sidecar")
    return SampleSet(chosen, which if which != "all" else "train")


def _heatmap_csv(path, segments):
    """segments: list of (source, start_bin, values[T', N_d], observed[T', N_d])."""
    lines = ["time_bin,distance_bin,headway_s,observed,source"]
    for source, start, values, observed in segments:
        n_t, n_d = values.shape
        for t in range(n_t):
            for j in range(n_d):
                obs = int(observed[t, j]) if observed is not None else 0
                lines.append(f"{start + t},{j},{float(values[t, j])!r},{obs},{source}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> None:
    started = time.time()
    config = load_line_config(args.config) if args.config else default_line_config()
    os.makedirs(args.out, exist_ok=True)
    logs = generate_dataset(config, args.replications, args.seed,
                            even_headway=args.even_headway, jitter_sd=args.jitter_sd)
    out_path = os.path.join(args.out, "trajectories.csv")
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(log_to_csv(logs))
    _write_manifest(args.out, "simulate",
                    {"line_config": json.loads(json.dumps(
                        {k: getattr(config, k) for k in config.__dataclass_fields__})),
                     "replications": args.replications,
                     "even_headway": args.even_headway, "jitter_sd": args.jitter_sd},
                    [args.config] if args.config else [], [out_path], args.seed, started)
    print(f"wrote {out_path} ({args.replications} replications)")


def cmd_preprocess(args) -> None:
    started = time.time()
    in_path = os.path.join(args.inp, "trajectories.csv")
    with open(in_path, encoding="utf-8") as fh:
        logs = logs_from_csv(fh.read())
    spec = default_grid_spec(
        t_start=args.t_start, t_end=args.t_end, delta_t=args.delta_t,
        n_distance_bins=args.distance_bins, d_min=args.d_min, d_max=args.d_max)
    grids = {}
    for traj_log in logs:
        grid, raster_report, impute_report = grid_from_log(traj_log, spec)
        log.info("replication %d: %d events outside the grid window, "
                 "%d empty columns", traj_log.replication_id,
                 raster_report.count(), len(impute_report.empty_columns))
        grids[traj_log.replication_id] = grid

    val_ids = validation_ids_for_split(list(grids), args.val_fraction, args.split_seed)
    train_grids = [g for rep, g in grids.items() if rep not in set(val_ids)]
    scaler = fit_scaler(train_grids if train_grids else list(grids.values()))
    split = {"validation_fraction": args.val_fraction, "seed": args.split_seed,
             "validation_ids": val_ids}
    save_grid_dir(args.out, grids, scaler, split=split)
    _write_manifest(args.out, "preprocess",
                    {"grid_spec": spec.to_dict(), "split": split},
                    [in_path], [args.out], args.split_seed, started)
    print(f"wrote {len(grids)} grids to {args.out} "
          f"(validation replications: {val_ids})")


def cmd_train(args) -> None:
    started = time.time()
    grids, scaler, sidecar = load_grid_dir(args.inp)
    wspec = WindowSpec(lookback=args.lookback, horizon=args.horizon)
    val_ids = set(sidecar.get("split", {}).get("validation_ids", []))
    if not val_ids:
        raise CliError("grid sidecar lacks a validation split; rerun preprocess")
    train_samples, val_samples = [], []
    for rep_id, grid in sorted(grids.items()):
        samples = extract_samples(normalize(grid, scaler), wspec, replication_id=rep_id)
        (val_samples if rep_id in val_ids else train_samples).extend(samples)
    train_set = SampleSet(train_samples, "train")
    val_set = SampleSet(val_samples, "validation")

    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         learning_rate=args.lr, patience=args.patience, seed=args.seed)
    params, history = train(train_set, val_set, config, init_seed=args.init_seed,
                            filters=args.filters)

    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.hwl")
    delta_t = grids[next(iter(grids))].spec.delta_t
    save_checkpoint(ckpt_path, params, scaler, wspec, delta_t, args.seed,
                    history.best_epoch,
                    extra={"stopped_early": history.stopped_early,
                           "diverged": history.diverged,
                           "n_train": len(train_set), "n_val": len(val_set)})
    hist_path = os.path.join(args.out, "history.csv")
    with open(hist_path, "w", encoding="utf-8") as fh:
        fh.write(history.to_csv())
    _write_manifest(args.out, "train",
                    {"epochs": args.epochs, "batch_size": args.batch_size,
                     "learning_rate": args.lr, "patience": args.patience,
                     "filters": args.filters, "lookback": args.lookback,
                     "horizon": args.horizon, "init_seed": args.init_seed},
                    [args.inp], [ckpt_path, hist_path], args.seed, started)
    print(f"trained {history.n_epochs()} epochs, best epoch {history.best_epoch} "
          f"(val {min(history.val_loss):.5f}); wrote {ckpt_path}")


def cmd_evaluate(args) -> None:
    started = time.time()
    ckpt, grids, sidecar = _load_grids_and_checkpoint(args)
    horizons = [int(h) for h in args.horizons.split(",")]
    sample_set = _select_samples(grids, ckpt, sidecar, args.split)
    report = evaluate(ckpt.params, ckpt.scaler, sample_set, horizons,
                      delta_t_s=ckpt.delta_t_s)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "metrics.csv")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(metrics_to_csv(report))
    _write_manifest(args.out, "evaluate",
                    {"horizons": horizons, "split": args.split},
                    [args.checkpoint, args.grids], [out_path], ckpt.seed, started)
    print(metrics_to_csv(report), end="")


def cmd_predict(args) -> None:
    started = time.time()
    ckpt, grids, _ = _load_grids_and_checkpoint(args)
    if args.replication not in grids:
        raise CliError(f"unknown replication {args.replication}")
    grid = grids[args.replication]
    x_window = _window_from_grid(grid, ckpt, args.anchor)
    F = ckpt.params.dims.horizon
    horizon_bins = args.rounds * F
    n_t = grid.spec.n_time_bins
    if args.anchor + horizon_bins > n_t:
        raise CliError(f"anchor {args.anchor} + horizon {horizon_bins} exceeds "
                       f"the grid's {n_t} bins; ground-truth terminal plan unavailable")
    terminal_bins = (ckpt.window.terminal_bin_nb, ckpt.window.terminal_bin_sb)
    plan = np.stack([grid.values[args.anchor:args.anchor + horizon_bins, terminal_bins[k], k]
                     for k in range(2)], axis=1)
    result = predict_recursive(ckpt.params, ckpt.scaler, x_window, plan, args.rounds,
                               anchor_time_bin=args.anchor, delta_t_s=ckpt.delta_t_s)

    os.makedirs(args.out, exist_ok=True)
    outputs = []
    L = ckpt.window.lookback
    for k, direction in enumerate(DIRECTIONS):
        path = os.path.join(args.out, f"heatmap_{direction}.csv")
        segments = [
            ("history", args.anchor - L, grid.values[args.anchor - L:args.anchor, :, k],
             grid.observed_mask[args.anchor - L:args.anchor, :, k]),
            ("actual", args.anchor, grid.values[args.anchor:args.anchor + horizon_bins, :, k],
             grid.observed_mask[args.anchor:args.anchor + horizon_bins, :, k]),
            ("predicted", args.anchor, result.y_hat[:, :, k, 0], None),
        ]
        _heatmap_csv(path, segments)
        outputs.append(path)
    _write_manifest(args.out, "predict",
                    {"replication": args.replication, "anchor": args.anchor,
                     "rounds": args.rounds},
                    [args.checkpoint, args.grids], outputs, ckpt.seed, started)
    print(f"wrote {', '.join(outputs)}")


def cmd_whatif(args) -> None:
    started = time.time()
    ckpt, grids, _ = _load_grids_and_checkpoint(args)
    if args.replication not in grids:
        raise CliError(f"unknown replication {args.replication}")
    grid = grids[args.replication]
    x_window = _window_from_grid(grid, ckpt, args.anchor)
    plans = [load_plan(p, min_headway=args.min_headway) for p in args.plan]
    if not plans:
        raise CliError("at least one --plan is required")
    horizon_bins = len(plans[0].headways)
    n_t = grid.spec.n_time_bins
    other = None
    k_other = direction_index(opposite_direction(plans[0].direction))
    terminal_bins = (ckpt.window.terminal_bin_nb, ckpt.window.terminal_bin_sb)
    if args.anchor + horizon_bins <= n_t:
        other = grid.values[args.anchor:args.anchor + horizon_bins,
                            terminal_bins[k_other], k_other]
    report = compare_plans(ckpt.params, ckpt.scaler, x_window, plans,
                           baseline_index=args.baseline,
                           other_direction_headways=other,
                           delta_t_s=ckpt.delta_t_s)
    os.makedirs(args.out, exist_ok=True)
    body = report_to_dict(report)
    outputs = []
    for i, outcome in enumerate(report.outcomes):
        for k, direction in enumerate(DIRECTIONS):
            path = os.path.join(args.out, f"whatif_plan{i}_{direction}.csv")
            _heatmap_csv(path, [("predicted", args.anchor,
                                 outcome.grid_seconds[:, :, k, 0], None)])
            outputs.append(path)
        body["plans"][i]["heatmap_files"] = outputs[-2:]
    report_path = os.path.join(args.out, "whatif_report.json")
    dump_json_atomic(report_path, body)
    outputs.append(report_path)
    _write_manifest(args.out, "whatif",
                    {"replication": args.replication, "anchor": args.anchor,
                     "baseline_index": args.baseline, "plans": [p.label for p in plans]},
                    [args.checkpoint, args.grids] + list(args.plan),
                    outputs, ckpt.seed, started)
    print(f"wrote {report_path}")


def cmd_export_scatter(args) -> None:
    started = time.time()
    ckpt, grids, sidecar = _load_grids_and_checkpoint(args)
    horizons = [int(h) for h in args.horizons.split(",")]
    sample_set = _select_samples(grids, ckpt, sidecar, args.split)
    report = station_scatter(ckpt.params, ckpt.scaler, sample_set,
                             args.distance_bin, horizons, delta_t_s=ckpt.delta_t_s)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, f"scatter_bin{args.distance_bin}.csv")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(scatter_to_csv(report))
    summary_path = os.path.join(args.out, f"scatter_bin{args.distance_bin}_rmse.csv")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("direction,horizon_min,rmse_s\n")
        for (direction, horizon), rmse in sorted(report.rmse.items()):
            fh.write(f"{direction},{horizon},{rmse!r}\n")
    _write_manifest(args.out, "export-scatter",
                    {"distance_bin": args.distance_bin, "horizons": horizons,
                     "split": args.split},
                    [args.checkpoint, args.grids], [out_path, summary_path],
                    ckpt.seed, started)
    print(f"wrote {out_path}")


def cmd_serve(args) -> None:
    from .service import serve
    serve(args.checkpoint, args.grids, args.port)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="headway-lab",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic trajectory CSVs")
    p.add_argument("--config", help="LineConfig JSON (defaults apply)")
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--even-headway", type=float, default=330.0)
    p.add_argument("--jitter-sd", type=float, default=60.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", help="trajectory CSVs -> grid files + scaler")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t-start", type=float, default=55800.0)
    p.add_argument("--t-end", type=float, default=64800.0)
    p.add_argument("--delta-t", type=float, default=60.0)
    p.add_argument("--distance-bins", type=int, default=64)
    p.add_argument("--d-min", type=float, default=0.0)
    p.add_argument("--d-max", type=float, default=140800.0)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=1)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="grids -> checkpoint + history CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--lookback", type=int, default=30)
    p.add_argument("--horizon", type=int, default=15)
    p.add_argument("--filters", type=int, default=32)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="checkpoint + grids -> metrics CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grids", required=True)
    p.add_argument("--horizons", default="15,30,45,60")
    p.add_argument("--split", choices=["validation", "train", "all"],
                   default="validation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="checkpoint + window -> heatmap CSVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grids", required=True)
    p.add_argument("--replication", type=int, required=True)
    p.add_argument("--anchor", type=int, required=True)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("whatif", help="compare terminal plans through the model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grids", required=True)
    p.add_argument("--replication", type=int, required=True)
    p.add_argument("--anchor", type=int, required=True)
    p.add_argument("--plan", action="append", default=[],
                   help="plan JSON file; repeatable")
    p.add_argument("--baseline", type=int, default=0)
    p.add_argument("--min-headway", type=float, default=120.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_whatif)

    p = sub.add_parser("export-scatter", help="per-station actual/predicted pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grids", required=True)
    p.add_argument("--distance-bin", type=int, required=True)
    p.add_argument("--horizons", default="15,30,45,60")
    p.add_argument("--split", choices=["validation", "train", "all"],
                   default="validation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_scatter)

    p = sub.add_parser("serve", help="start the prediction/what-if HTTP service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grids", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (CliError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

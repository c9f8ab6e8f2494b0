"""Slice normalized headway grids into (x, t_future, y) training samples.

A sample anchored at time bin t sees the L bins before t as input, the F
bins from t onward as target, and the target's terminal-bin rows as the
planned-terminal-headway channel. The train/validation split is by
replication so overlapping windows never straddle the split.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .grid import HeadwayGrid

log = logging.getLogger("headway_lab.windowing")


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    lookback: int = 30
    horizon: int = 15
    terminal_bin_nb: int = 0
    terminal_bin_sb: int = 0

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1:
            raise WindowError("lookback and horizon must be >= 1")
        if self.terminal_bin_nb < 0 or self.terminal_bin_sb < 0:
            raise WindowError("terminal bins must be non-negative")

    @property
    def terminal_bins(self) -> tuple[int, int]:
        return (self.terminal_bin_nb, self.terminal_bin_sb)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class Sample:
    x: np.ndarray          # [L, N_d, 2, 1] normalized
    t_future: np.ndarray   # [F, 2, 1] normalized terminal headways
    y: np.ndarray          # [F, N_d, 2, 1] normalized
    replication_id: int
    anchor_time_bin: int


@dataclass
class SampleSet:
    samples: list[Sample]
    role: str  # "train" | "validation"

    def replication_ids(self) -> set[int]:
        return {s.replication_id for s in self.samples}

    def __len__(self) -> int:
        return len(self.samples)


def extract_samples(grid: HeadwayGrid, wspec: WindowSpec,
                    replication_id: int = 0) -> list[Sample]:
    """One sample per anchor t in [L, n_time_bins - F], stride 1.

    The grid must already be normalized. A grid shorter than L + F bins
    yields an empty list and a logged warning.
    """
    n_t = grid.spec.n_time_bins
    n_d = grid.spec.n_distance_bins
    L, F = wspec.lookback, wspec.horizon
    if max(wspec.terminal_bins) >= n_d:
        raise WindowError("terminal bin outside the distance grid")
    if n_t < L + F:
        log.warning("replication %d: grid has %d bins, need %d; no samples",
                    replication_id, n_t, L + F)
        return []

    values = grid.values.astype(np.float32)
    samples = []
    for t in range(L, n_t - F + 1):
        x = values[t - L:t, :, :, None]
        y = values[t:t + F, :, :, None]
        t_future = np.stack(
            [y[:, wspec.terminal_bin_nb, 0, 0], y[:, wspec.terminal_bin_sb, 1, 0]],
            axis=1,
        )[:, :, None]
        samples.append(Sample(x=x, t_future=t_future, y=y,
                              replication_id=replication_id, anchor_time_bin=t))
    return samples


def split_by_replication(samples: list[Sample], validation_fraction: float,
                         seed: int) -> tuple[SampleSet, SampleSet]:
    """Shuffle replication ids with the given seed; the last
    ceil(fraction * R) ids become the validation set."""
    if not 0.0 < validation_fraction < 1.0:
        raise WindowError("validation_fraction must be in (0, 1)")
    rep_ids = sorted({s.replication_id for s in samples})
    if len(rep_ids) < 2:
        raise WindowError("need at least two replications to hold one out")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = [rep_ids[i] for i in rng.permutation(len(rep_ids))]
    n_val = math.ceil(validation_fraction * len(rep_ids))
    val_ids = set(order[-n_val:])
    train = [s for s in samples if s.replication_id not in val_ids]
    val = [s for s in samples if s.replication_id in val_ids]
    return SampleSet(train, "train"), SampleSet(val, "validation")


def validation_ids_for_split(rep_ids, validation_fraction: float, seed: int) -> list[int]:
    """The validation replication ids the split above would choose."""
    rep_ids = sorted(rep_ids)
    rng = np.random.Generator(np.random.PCG64(seed))
    order = [rep_ids[i] for i in rng.permutation(len(rep_ids))]
    n_val = math.ceil(validation_fraction * len(rep_ids))
    return sorted(order[-n_val:])


# ---------------------------------------------------------------------------
# sample store: JSONL manifest + flat little-endian float32 payload

MANIFEST_NAME = "samples.jsonl"
PAYLOAD_NAME = "samples.f32"


def save_samples(out_dir: str, samples: list[Sample], wspec: WindowSpec) -> None:
    """x, t_future, y written contiguously per sample; the manifest records
    byte offsets into the payload."""
    os.makedirs(out_dir, exist_ok=True)
    offset = 0
    lines = []
    with open(os.path.join(out_dir, PAYLOAD_NAME), "wb") as payload:
        for s in samples:
            record = {"replication_id": s.replication_id,
                      "anchor_time_bin": s.anchor_time_bin,
                      "offset": offset}
            for name, arr in (("x", s.x), ("t_future", s.t_future), ("y", s.y)):
                data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
                record[f"{name}_shape"] = list(arr.shape)
                payload.write(data)
                offset += len(data)
            lines.append(json.dumps(record, sort_keys=True))
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "window_spec.json"), "w", encoding="utf-8") as fh:
        json.dump(wspec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_samples(in_dir: str) -> tuple[list[Sample], WindowSpec]:
    with open(os.path.join(in_dir, "window_spec.json"), encoding="utf-8") as fh:
        wspec = WindowSpec(**json.load(fh))
    with open(os.path.join(in_dir, PAYLOAD_NAME), "rb") as fh:
        payload = fh.read()
    samples = []
    with open(os.path.join(in_dir, MANIFEST_NAME), encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            offset = rec["offset"]
            arrays = {}
            for name in ("x", "t_future", "y"):
                shape = tuple(rec[f"{name}_shape"])
                n_bytes = int(np.prod(shape)) * 4
                arrays[name] = np.frombuffer(
                    payload[offset:offset + n_bytes], dtype="<f4").reshape(shape)
                offset += n_bytes
            samples.append(Sample(x=arrays["x"], t_future=arrays["t_future"],
                                  y=arrays["y"], replication_id=rec["replication_id"],
                                  anchor_time_bin=rec["anchor_time_bin"]))
    return samples, wspec

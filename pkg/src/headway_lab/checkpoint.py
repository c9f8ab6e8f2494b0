"""Binary checkpoint: JSON header + raw little-endian float32 blocks.

Layout: 8-byte magic, uint32 header length, UTF-8 JSON header, then the
parameter tensors concatenated in ModelParams.named_arrays() order. The
header records shapes, byte offsets and a SHA-256 of the payload, so a
load either reproduces the saved model bit for bit or refuses.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .convlstm import LayerParams, ModelDims, ModelParams
from .grid import Scaler
from .windowing import WindowSpec

MAGIC = b"HWLCKPT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    scaler: Scaler
    window: WindowSpec
    delta_t_s: float
    seed: int
    epoch: int
    extra: dict
    digest: str = ""


def save_checkpoint(path: str, params: ModelParams, scaler: Scaler,
                    window: WindowSpec, delta_t_s: float, seed: int,
                    epoch: int, extra: dict | None = None) -> None:
    arrays = [(name, np.ascontiguousarray(arr, dtype="<f4"))
              for name, arr in params.named_arrays()]
    blocks = []
    offset = 0
    for name, arr in arrays:
        data = arr.tobytes()
        blocks.append({"name": name, "shape": list(arr.shape),
                       "offset": offset, "nbytes": len(data)})
        offset += len(data)
    payload = b"".join(arr.tobytes() for _, arr in arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "dims": params.dims.to_dict(),
        "scaler": {"h_min": scaler.h_min, "h_max": scaler.h_max},
        "window": window.to_dict(),
        "delta_t_s": delta_t_s,
        "seed": seed,
        "epoch": epoch,
        "arrays": blocks,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    """Read a checkpoint, verifying magic, version, digest and shapes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a headway-lab checkpoint")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    header_start = len(MAGIC) + 4
    if header_start + header_len > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[header_start:header_start + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version "
                              f"{header.get('format_version')}")

    payload = blob[header_start + header_len:]
    expected = sum(b["nbytes"] for b in header["arrays"])
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, "
                              f"header declares {expected}")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload digest mismatch")

    dims = ModelDims(**header["dims"])
    arrays = {}
    for block in header["arrays"]:
        shape = tuple(block["shape"])
        n = int(np.prod(shape))
        if n * 4 != block["nbytes"]:
            raise CheckpointError(f"{path}: block {block['name']} shape/size mismatch")
        arr = np.frombuffer(payload, dtype="<f4", count=n,
                            offset=block["offset"]).reshape(shape)
        arrays[block["name"]] = np.ascontiguousarray(arr)

    try:
        params = ModelParams(
            dims=dims,
            encoder=LayerParams(arrays["encoder.w_x"], arrays["encoder.w_h"],
                                arrays["encoder.b"]),
            decoder=LayerParams(arrays["decoder.w_x"], arrays["decoder.w_h"],
                                arrays["decoder.b"]),
            head_w=arrays["head.w"],
            head_b=arrays["head.b"],
        )
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing parameter block {exc}") from exc

    return Checkpoint(
        params=params,
        scaler=Scaler(**header["scaler"]),
        window=WindowSpec(**header["window"]),
        delta_t_s=header["delta_t_s"],
        seed=header["seed"],
        epoch=header["epoch"],
        extra=header.get("extra", {}),
        digest=digest,
    )

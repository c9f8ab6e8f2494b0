"""Shared direction tokens and small helpers used across the pipeline."""

from __future__ import annotations

import json
import logging
import os

NB = "NB"
SB = "SB"
DIRECTIONS = (NB, SB)

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def direction_index(direction: str) -> int:
    """Map a direction token to its channel index (NB=0, SB=1)."""
    try:
        return DIRECTIONS.index(direction)
    except ValueError:
        raise ValueError(f"unknown direction {direction!r}, expected one of {DIRECTIONS}") from None


def opposite_direction(direction: str) -> str:
    return SB if direction == NB else NB


def configure_logging() -> None:
    """Set log level from the HEADWAY_LAB_LOG environment variable."""
    level_name = os.environ.get("HEADWAY_LAB_LOG", "error").lower()
    level = _LOG_LEVELS.get(level_name, logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("headway_lab").setLevel(level)


def dump_json_atomic(path: str, payload: dict) -> None:
    """Write JSON via a temp file + rename so readers never see partial output."""
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)

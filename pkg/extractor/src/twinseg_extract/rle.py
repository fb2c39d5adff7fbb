"""Twin JSON building blocks, implemented against the documented schema.

Deliberately self-contained: this package communicates with the twinseg
pipeline only through twin JSON files, so the run-length encoding and the
depth statistic definitions are reimplemented here exactly as the schema
documents them (row-major runs starting with background; mean, min, max,
population variance, pixel count over mask pixels).
"""

from __future__ import annotations

from typing import Any

import numpy as np

SCHEMA_VERSION = "1.0"


def encode_runs(raster: np.ndarray) -> list[int]:
    """Row-major RLE, leading background count (a leading 0 marks a mask whose
    first pixel is foreground)."""
    flat = np.asarray(raster, dtype=bool).ravel(order="C")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0, *runs]
    return [int(r) for r in runs]


def mask_json(raster: np.ndarray) -> dict[str, Any]:
    height, width = raster.shape
    return {"width": int(width), "height": int(height), "runs": encode_runs(raster)}


def depth_stats_json(raster: np.ndarray, depth: np.ndarray) -> dict[str, Any]:
    values = np.asarray(depth, dtype=np.float64)[np.asarray(raster, dtype=bool)]
    if values.size == 0:
        raise ValueError("empty mask has no depth statistics")
    lo, hi = float(values.min()), float(values.max())
    mean = min(max(float(values.mean()), lo), hi)
    return {
        "mean": mean,
        "min": lo,
        "max": hi,
        "variance": float(values.var()),
        "pixel_count": int(values.size),
    }


def tight_bbox(raster: np.ndarray) -> list[int]:
    ys, xs = np.nonzero(raster)
    return [int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())]

"""Independent brute-force oracles and tiny twin builders.

The oracles here deliberately avoid the library's vectorized code paths:
per-pixel Python loops and neighborhood set lookups, so they stay independent
of what they check.
"""

from __future__ import annotations

import math
import random
from typing import Sequence

import numpy as np

from twinseg.twin import DepthMap, InstanceRecord, compute_depth_stats, encode_mask


# --- brute-force oracles -----------------------------------------------------


def iou_oracle(a: Sequence[bool], b: Sequence[bool]) -> float:
    """Per-pixel counting IoU over flat pixel lists; both-empty is 1.0."""
    inter = 0
    union = 0
    for pa, pb in zip(a, b, strict=True):
        if pa and pb:
            inter += 1
        if pa or pb:
            union += 1
    return 1.0 if union == 0 else inter / union


def boundary_oracle(raster: np.ndarray) -> set[tuple[int, int]]:
    """Foreground pixels 4-adjacent to background or the border, by lookup."""
    h, w = raster.shape
    fg = {(y, x) for y in range(h) for x in range(w) if raster[y, x]}
    out = set()
    for y, x in fg:
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ny, nx = y + dy, x + dx
            if not (0 <= ny < h and 0 <= nx < w) or (ny, nx) not in fg:
                out.add((y, x))
                break
    return out


def f_oracle(pred: np.ndarray, gt: np.ndarray, tolerance: int) -> float:
    """All-pairs (via neighborhood lookup) boundary F-measure."""
    pb = boundary_oracle(pred)
    gb = boundary_oracle(gt)
    if not pb and not gb:
        return 1.0
    if not pb or not gb:
        return 0.0

    def matched(points: set[tuple[int, int]], targets: set[tuple[int, int]]) -> int:
        hits = 0
        for y, x in points:
            found = False
            for dy in range(-tolerance, tolerance + 1):
                for dx in range(-tolerance, tolerance + 1):
                    if (y + dy, x + dx) in targets:
                        found = True
                        break
                if found:
                    break
            if found:
                hits += 1
        return hits

    precision = matched(pb, gb) / len(pb)
    recall = matched(gb, pb) / len(gb)
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def depth_stats_oracle(raster: np.ndarray, depth: np.ndarray) -> tuple[float, float, float, float, int]:
    """(mean, min, max, population variance, count) by pixel enumeration."""
    values = [float(depth[y, x]) for y in range(raster.shape[0]) for x in range(raster.shape[1]) if raster[y, x]]
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, min(values), max(values), var, n


def random_raster(rng: random.Random, max_side: int = 64) -> np.ndarray:
    w = rng.randint(1, max_side)
    h = rng.randint(1, max_side)
    density = rng.random()
    return np.array(
        [[rng.random() < density for _ in range(w)] for _ in range(h)], dtype=bool
    )


def random_blob(rng: random.Random, side: int = 64) -> np.ndarray:
    """A filled rectangle or disc; gives structured boundaries."""
    grid = np.zeros((side, side), dtype=bool)
    if rng.random() < 0.5:
        x0, y0 = rng.randint(0, side - 2), rng.randint(0, side - 2)
        x1, y1 = rng.randint(x0 + 1, side), rng.randint(y0 + 1, side)
        grid[y0:y1, x0:x1] = True
    else:
        cx, cy = rng.randint(0, side - 1), rng.randint(0, side - 1)
        r = rng.randint(1, side // 3)
        ys, xs = np.ogrid[:side, :side]
        grid = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    return grid


# --- tiny twin builders -------------------------------------------------------


def instance_from_raster(
    instance_id: int,
    raster: np.ndarray,
    depth: float = 5.0,
    label: str = "object",
) -> InstanceRecord:
    mask = encode_mask(raster)
    depth_map = DepthMap(mask.width, mask.height, np.full(raster.shape, depth))
    stats = compute_depth_stats(mask, depth_map)
    return InstanceRecord(
        id=instance_id,
        mask=mask,
        depth_stats=stats,
        mean_depth=stats.mean,
        semantic_label=label,
    )


def square_raster(side: int, x0: int, y0: int, size: int) -> np.ndarray:
    grid = np.zeros((side, side), dtype=bool)
    grid[y0:y0 + size, x0:x0 + size] = True
    return grid

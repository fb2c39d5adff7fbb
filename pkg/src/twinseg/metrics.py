"""Segmentation evaluation metrics.

Per-frame IoU, sequence region similarity J (mean IoU), contour accuracy F
(boundary F-measure with a Chebyshev pixel tolerance), and the dataset-level
pair gIoU (mean of per-sample IoU) and cIoU (cumulative intersection over
cumulative union). Everything is pure and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, hypot
from typing import Sequence

import numpy as np
from scipy import ndimage

from .twin import Mask, mask_iou

DEFAULT_BOUNDARY_TOLERANCE = 1


@dataclass(frozen=True)
class SequenceEval:
    per_frame_iou: tuple[float, ...]
    j: float
    f: float

    @property
    def jf(self) -> float:
        return (self.j + self.f) / 2.0


@dataclass(frozen=True)
class DatasetEval:
    giou: float
    ciou: float
    n_samples: int


def boundary_pixels(raster: np.ndarray) -> np.ndarray:
    """Foreground pixels 4-adjacent to background or the image border."""
    fg = raster.astype(bool)
    if not fg.any():
        return np.zeros_like(fg)
    padded = np.pad(fg, 1, constant_values=False)
    interior = (
        padded[1:-1, 1:-1]
        & padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    return fg & ~interior


def _within_chebyshev(target: np.ndarray, tolerance: int) -> np.ndarray:
    if tolerance <= 0:
        return target
    size = 2 * tolerance + 1
    return ndimage.maximum_filter(target.astype(np.uint8), size=size, mode="constant") > 0


def f_measure(pred: Mask, gt: Mask, tolerance: int = DEFAULT_BOUNDARY_TOLERANCE) -> float:
    """Boundary F-measure: precision/recall of boundary pixels matched within
    ``tolerance`` (Chebyshev). 1.0 when both boundaries are empty, 0.0 when
    exactly one is."""
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ValueError(
            f"dimension mismatch: {pred.width}x{pred.height} vs {gt.width}x{gt.height}"
        )
    pb = boundary_pixels(pred.decode())
    gb = boundary_pixels(gt.decode())
    np_pred = int(pb.sum())
    np_gt = int(gb.sum())
    if np_pred == 0 and np_gt == 0:
        return 1.0
    if np_pred == 0 or np_gt == 0:
        return 0.0
    precision = int((pb & _within_chebyshev(gb, tolerance)).sum()) / np_pred
    recall = int((gb & _within_chebyshev(pb, tolerance)).sum()) / np_gt
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def diagonal_tolerance(width: int, height: int, fraction: float = 0.008) -> int:
    """Benchmark-compatible tolerance: a fraction of the image diagonal
    (0.8% by default), at least one pixel."""
    return max(1, ceil(fraction * hypot(width, height)))


def j_measure(pred: Sequence[Mask], gt: Sequence[Mask]) -> float:
    """Mean per-frame IoU over a sequence."""
    if len(pred) != len(gt):
        raise ValueError(f"frame count mismatch: {len(pred)} vs {len(gt)}")
    if not pred:
        raise ValueError("sequence must contain at least one frame")
    return float(np.mean([mask_iou(p, g) for p, g in zip(pred, gt)]))


def sequence_eval(
    pred: Sequence[Mask], gt: Sequence[Mask], tolerance: int = DEFAULT_BOUNDARY_TOLERANCE
) -> SequenceEval:
    if len(pred) != len(gt):
        raise ValueError(f"frame count mismatch: {len(pred)} vs {len(gt)}")
    if not pred:
        raise ValueError("sequence must contain at least one frame")
    ious = tuple(mask_iou(p, g) for p, g in zip(pred, gt))
    f_scores = [f_measure(p, g, tolerance) for p, g in zip(pred, gt)]
    return SequenceEval(
        per_frame_iou=ious,
        j=float(np.mean(ious)),
        f=float(np.mean(f_scores)),
    )


def dataset_eval(samples: Sequence[tuple[Mask, Mask]]) -> DatasetEval:
    """gIoU = mean of per-sample IoU; cIoU = sum of intersections over sum of
    unions. Summation follows sample order for bit reproducibility."""
    if not samples:
        raise ValueError("dataset must contain at least one sample")
    ious = []
    inter_total = 0
    union_total = 0
    for pred, gt in samples:
        ious.append(mask_iou(pred, gt))
        rp, rg = pred.decode(), gt.decode()
        inter_total += int(np.count_nonzero(rp & rg))
        union_total += int(np.count_nonzero(rp | rg))
    ciou = 1.0 if union_total == 0 else inter_total / union_total
    return DatasetEval(giou=float(np.mean(ious)), ciou=ciou, n_samples=len(samples))

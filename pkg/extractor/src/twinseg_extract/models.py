"""Model backends for the three extraction roles.

Each role is a registry of named backends so real inference models can plug
in behind the same seams. The defaults are classical CPU implementations
that run anywhere: connected-component segmentation with IoU tracking, an
intensity-based depth proxy, and a palette-color detector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import cv2
import numpy as np

PALETTE = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (40, 80, 220),
    "yellow": (230, 220, 50),
    "purple": (150, 60, 200),
    "orange": (240, 140, 40),
    "cyan": (60, 210, 210),
    "magenta": (220, 60, 180),
}

_FG_THRESHOLD = 15
_MIN_COMPONENT_PX = 4
_TRACK_IOU_THRESHOLD = 0.1


@dataclass
class Detection:
    bbox: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max inclusive
    label: str
    confidence: float


class SegmenterBackend:
    """Per-frame instance masks with track-stable ids."""

    name = "threshold-cc"

    def __init__(self) -> None:
        self._previous: dict[int, np.ndarray] = {}
        self._next_id = 1

    def reset(self) -> None:
        self._previous = {}
        self._next_id = 1

    def segment(self, frame_bgr: np.ndarray) -> dict[int, np.ndarray]:
        gray = cv2.cvtColor(frame_bgr, cv2.COLOR_BGR2GRAY)
        fg = (gray > _FG_THRESHOLD).astype(np.uint8)
        n_labels, labels = cv2.connectedComponents(fg, connectivity=4)
        components = []
        for label in range(1, n_labels):
            raster = labels == label
            if int(raster.sum()) >= _MIN_COMPONENT_PX:
                components.append(raster)

        # Greedy IoU matching against the previous frame keeps ids stable.
        assigned: dict[int, np.ndarray] = {}
        candidates = []
        for index, raster in enumerate(components):
            for track_id, previous in self._previous.items():
                inter = int((raster & previous).sum())
                union = int((raster | previous).sum())
                if union and inter / union >= _TRACK_IOU_THRESHOLD:
                    candidates.append((inter / union, index, track_id))
        used_components: set[int] = set()
        used_tracks: set[int] = set()
        for _, index, track_id in sorted(candidates, key=lambda c: (-c[0], c[1], c[2])):
            if index in used_components or track_id in used_tracks:
                continue
            assigned[track_id] = components[index]
            used_components.add(index)
            used_tracks.add(track_id)
        for index, raster in enumerate(components):
            if index not in used_components:
                assigned[self._next_id] = raster
                self._next_id += 1
        self._previous = assigned
        return assigned


class DepthBackend:
    """Monotone depth proxy from intensity: brighter pixels are nearer."""

    name = "intensity"

    def estimate(self, frame_bgr: np.ndarray) -> np.ndarray:
        gray = cv2.cvtColor(frame_bgr, cv2.COLOR_BGR2GRAY).astype(np.float64)
        return 1.0 + (255.0 - gray) * (9.0 / 255.0)


class DetectorBackend:
    """Color-name detection: one box and label per color blob."""

    name = "colorname"

    def detect(self, frame_bgr: np.ndarray) -> list[Detection]:
        gray = cv2.cvtColor(frame_bgr, cv2.COLOR_BGR2GRAY)
        fg = (gray > _FG_THRESHOLD).astype(np.uint8)
        n_labels, labels = cv2.connectedComponents(fg, connectivity=4)
        rgb = frame_bgr[:, :, ::-1].astype(np.float64)
        names = list(PALETTE)
        anchors = np.array([PALETTE[n] for n in names], dtype=np.float64)
        detections = []
        for label in range(1, n_labels):
            raster = labels == label
            if int(raster.sum()) < _MIN_COMPONENT_PX:
                continue
            pixels = rgb[raster]
            nearest = np.argmin(
                ((pixels[:, None, :] - anchors[None, :, :]) ** 2).sum(axis=2), axis=1
            )
            counts = np.bincount(nearest, minlength=len(names))
            winner = int(counts.argmax())
            confidence = float(counts[winner] / pixels.shape[0])
            ys, xs = np.nonzero(raster)
            detections.append(
                Detection(
                    bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
                    label=f"{names[winner]} object",
                    confidence=confidence,
                )
            )
        return detections


SEGMENTERS: dict[str, Callable[[], SegmenterBackend]] = {"threshold-cc": SegmenterBackend}
DEPTH_ESTIMATORS: dict[str, Callable[[], DepthBackend]] = {"intensity": DepthBackend}
DETECTORS: dict[str, Callable[[], DetectorBackend]] = {"colorname": DetectorBackend}


def box_iou(a: Sequence[int], b: Sequence[int]) -> float:
    """IoU of two inclusive pixel boxes."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    ix0, iy0 = max(ax0, bx0), max(ay0, by0)
    ix1, iy1 = min(ax1, bx1), min(ay1, by1)
    if ix0 > ix1 or iy0 > iy1:
        return 0.0
    inter = (ix1 - ix0 + 1) * (iy1 - iy0 + 1)
    area_a = (ax1 - ax0 + 1) * (ay1 - ay0 + 1)
    area_b = (bx1 - bx0 + 1) * (by1 - by0 + 1)
    return inter / (area_a + area_b - inter)

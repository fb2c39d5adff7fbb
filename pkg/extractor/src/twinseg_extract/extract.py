"""Extraction: media in, twin JSON out.

Frames come from a directory of images, a single image (a one-frame video),
or a video file. Per frame, the segmenter yields track-stable masks, the
depth backend a dense depth map, and the detector labeled boxes; detections
attach to masks by box-to-mask-bbox IoU (threshold 0.5, greedy by descending
confidence). Depth maps are saved alongside the twin so downstream tooling
can recompute the per-instance statistics.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .models import DEPTH_ESTIMATORS, DETECTORS, SEGMENTERS, box_iou
from .rle import SCHEMA_VERSION, depth_stats_json, mask_json, tight_bbox

log = logging.getLogger("twinseg_extract")

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
_BOX_MATCH_IOU = 0.5


class ExtractionError(RuntimeError):
    pass


@dataclass
class ExtractionJob:
    input_path: Path
    out_dir: Path
    stride: int = 1
    segmenter: str = "threshold-cc"
    depth_estimator: str = "intensity"
    detector: str = "colorname"

    def __post_init__(self) -> None:
        self.input_path = Path(self.input_path)
        self.out_dir = Path(self.out_dir)
        if self.stride < 1:
            raise ExtractionError("stride must be >= 1")
        for role, name, registry in (
            ("segmenter", self.segmenter, SEGMENTERS),
            ("depth estimator", self.depth_estimator, DEPTH_ESTIMATORS),
            ("detector", self.detector, DETECTORS),
        ):
            if name not in registry:
                raise ExtractionError(
                    f"unknown {role} {name!r}; available: {sorted(registry)}"
                )


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"))
    return rgb[:, :, ::-1].copy()  # BGR, the convention the backends use


def load_frames(input_path: Path, stride: int) -> list[np.ndarray]:
    if input_path.is_dir():
        files = sorted(
            p for p in input_path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
        )
        if not files:
            raise ExtractionError(f"{input_path} contains no image files")
        return [_load_image(p) for p in files[::stride]]
    if not input_path.exists():
        raise ExtractionError(f"input {input_path} does not exist")
    if input_path.suffix.lower() in _IMAGE_SUFFIXES:
        return [_load_image(input_path)]
    capture = cv2.VideoCapture(str(input_path))
    if not capture.isOpened():
        raise ExtractionError(f"cannot open video {input_path}")
    frames = []
    index = 0
    while True:
        ok, frame = capture.read()
        if not ok:
            break
        if index % stride == 0:
            frames.append(frame)
        index += 1
    capture.release()
    if not frames:
        raise ExtractionError(f"video {input_path} yielded no frames")
    return frames


def _fuse_labels(masks: dict[int, np.ndarray], detections) -> dict[int, tuple[str, float]]:
    """Greedy assignment of detections to masks by box IoU, best first."""
    fused = {instance_id: ("object", 0.0) for instance_id in masks}
    boxes = {instance_id: tight_bbox(raster) for instance_id, raster in masks.items()}
    taken: set[int] = set()
    for detection in sorted(detections, key=lambda d: -d.confidence):
        best_id = None
        best_iou = _BOX_MATCH_IOU
        for instance_id, box in boxes.items():
            if instance_id in taken:
                continue
            iou = box_iou(detection.bbox, box)
            if iou >= best_iou:
                best_iou = iou
                best_id = instance_id
        if best_id is not None:
            fused[best_id] = (detection.label, detection.confidence)
            taken.add(best_id)
    return fused


def extract(job: ExtractionJob) -> Path:
    """Run the three backends over the input and write the twin JSON.

    Returns the twin path. Depth maps land in ``<out>/depth/frame_%04d.npy``.
    """
    frames = load_frames(job.input_path, job.stride)
    segmenter = SEGMENTERS[job.segmenter]()
    depth_backend = DEPTH_ESTIMATORS[job.depth_estimator]()
    detector = DETECTORS[job.detector]()

    job.out_dir.mkdir(parents=True, exist_ok=True)
    depth_dir = job.out_dir / "depth"
    depth_dir.mkdir(exist_ok=True)

    frames_json = []
    for t, frame in enumerate(frames, start=1):
        masks = segmenter.segment(frame)
        depth = depth_backend.estimate(frame)
        detections = detector.detect(frame)
        labels = _fuse_labels(masks, detections)
        np.save(depth_dir / f"frame_{t:04d}.npy", depth)
        if not masks:
            log.warning("frame %d: zero detections; emitting an empty frame", t)
        instances = []
        for instance_id in sorted(masks):
            raster = masks[instance_id]
            stats = depth_stats_json(raster, depth)
            label, confidence = labels[instance_id]
            instances.append(
                {
                    "id": int(instance_id),
                    "mask": mask_json(raster),
                    "depth_stats": stats,
                    "mean_depth": stats["mean"],
                    "semantic_label": label,
                    "x_bbox": tight_bbox(raster),
                    "x_confidence": confidence,
                    "x_derived": {},
                }
            )
        frames_json.append({"t": t, "instances": instances})

    doc = {
        "schema_version": SCHEMA_VERSION,
        "source": {
            "video_id": job.input_path.name,
            "extractor": (
                f"twinseg-extract/0.1.0 {job.segmenter}+{job.depth_estimator}+{job.detector}"
            ),
        },
        "frames": frames_json,
    }
    twin_path = job.out_dir / "twin.json"
    twin_path.write_text(
        json.dumps(doc, separators=(",", ":"), ensure_ascii=True), encoding="utf-8"
    )
    return twin_path

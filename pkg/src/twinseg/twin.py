"""Digital twin scene representation.

The twin is the structured intermediate between perception and reasoning:
per-frame instance records carrying a run-length encoded mask, depth
statistics, and a semantic label, with a canonical byte-deterministic JSON
form shared by every pipeline stage. All types are immutable values; all
operations are pure functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

SCHEMA_VERSION = "1.0"

# Keys every instance record carries in the JSON form. Artifact extensions
# are namespaced with an "x_" prefix so the core keys stay verbatim.
CORE_KEYS = ("mask", "depth_stats", "mean_depth", "semantic_label")
EXTENSION_KEYS = ("x_bbox", "x_confidence", "x_derived")

_DERIVED_SCALARS = (bool, int, float, str)


class TwinValidationError(ValueError):
    """A twin value or its JSON form violates an invariant.

    ``path`` addresses the offending element, e.g.
    ``frames[0].instances[id=3].mask``.
    """

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


def _as_int(value: Any, path: str, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TwinValidationError(path, f"{name} must be an integer, got {value!r}")
    return value


@dataclass(frozen=True)
class Mask:
    """Run-length encoded binary mask.

    ``runs`` alternates run counts in row-major scan order, starting with the
    background count. A canonical encoding has at most one zero-length run,
    and only as the leading element (a mask whose first pixel is foreground).
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "runs", tuple(int(r) for r in self.runs))
        if self.width <= 0 or self.height <= 0:
            raise TwinValidationError("mask", f"dimensions must be positive, got {self.width}x{self.height}")
        if not self.runs:
            raise TwinValidationError("mask", "runs must be non-empty")
        if any(r < 0 for r in self.runs):
            raise TwinValidationError("mask", "run counts must be >= 0")
        if any(r == 0 for r in self.runs[1:]):
            raise TwinValidationError("mask", "zero-length run only permitted as the leading element")
        total = sum(self.runs)
        if total != self.width * self.height:
            raise TwinValidationError(
                "mask", f"runs sum {total} != width*height {self.width * self.height}"
            )

    @classmethod
    def empty(cls, width: int, height: int) -> "Mask":
        return cls(width, height, (width * height,))

    @classmethod
    def full(cls, width: int, height: int) -> "Mask":
        return cls(width, height, (0, width * height))

    def decode(self) -> np.ndarray:
        return decode_mask(self)

    def area(self) -> int:
        """Foreground pixel count."""
        return sum(self.runs[1::2])

    def bbox(self) -> tuple[int, int, int, int] | None:
        """Tight (x_min, y_min, x_max, y_max) over foreground pixels, inclusive."""
        if self.area() == 0:
            return None
        ys, xs = np.nonzero(self.decode())
        return (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))

    def centroid(self) -> tuple[float, float]:
        """Mean (x, y) of foreground pixels; image coords, x rightward, y downward."""
        if self.area() == 0:
            raise ValueError("centroid of empty mask")
        ys, xs = np.nonzero(self.decode())
        return (float(xs.mean()), float(ys.mean()))


def encode_mask(bitmap: Any) -> Mask:
    """Encode a row-major boolean raster as a canonical RLE mask."""
    arr = np.asarray(bitmap)
    if arr.ndim != 2:
        raise ValueError(f"raster must be 2-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("raster dimensions must be positive")
    arr = arr.astype(bool)
    height, width = arr.shape
    flat = arr.ravel(order="C")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0, *runs]
    return Mask(width, height, tuple(int(r) for r in runs))


def decode_mask(m: Mask) -> np.ndarray:
    """Decode to a (height, width) boolean raster."""
    counts = np.asarray(m.runs, dtype=np.int64)
    if int(counts.sum()) != m.width * m.height:
        raise ValueError(f"runs sum {int(counts.sum())} != width*height {m.width * m.height}")
    values = np.zeros(len(m.runs), dtype=bool)
    values[1::2] = True
    return np.repeat(values, counts).reshape(m.height, m.width)


def mask_iou(a: Mask, b: Mask) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(
            f"dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    ra = a.decode()
    rb = b.decode()
    union = int(np.count_nonzero(ra | rb))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(ra & rb))
    return inter / union


def union_masks(masks: Sequence[Mask], width: int, height: int) -> Mask:
    """OR of masks; empty sequence yields the all-background mask."""
    acc = np.zeros((height, width), dtype=bool)
    for m in masks:
        if (m.width, m.height) != (width, height):
            raise ValueError("dimension mismatch in mask union")
        acc |= m.decode()
    return encode_mask(acc)


class DepthMap:
    """Dense per-pixel depth, arbitrary monotone units (smaller = nearer)."""

    def __init__(self, width: int, height: int, values: Any) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.size != width * height:
            raise ValueError(f"values length {arr.size} != width*height {width * height}")
        arr = arr.reshape(height, width)
        if not np.isfinite(arr).all():
            raise ValueError("depth values must all be finite")
        arr.flags.writeable = False
        self.width = width
        self.height = height
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values


@dataclass(frozen=True)
class DepthStats:
    """Per-instance depth statistics over foreground pixels."""

    mean: float
    min: float
    max: float
    variance: float
    pixel_count: int

    def __post_init__(self) -> None:
        for name in ("mean", "min", "max", "variance"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "pixel_count", int(self.pixel_count))
        if self.pixel_count < 1:
            raise TwinValidationError("depth_stats", "pixel_count must be >= 1")
        if not (self.min <= self.mean <= self.max):
            raise TwinValidationError(
                "depth_stats", f"expected min <= mean <= max, got {self.min}, {self.mean}, {self.max}"
            )
        if self.variance < 0:
            raise TwinValidationError("depth_stats", f"variance must be >= 0, got {self.variance}")


def compute_depth_stats(m: Mask, z: DepthMap) -> DepthStats:
    """Statistics of ``z`` over the foreground of ``m`` (population variance)."""
    if (m.width, m.height) != (z.width, z.height):
        raise ValueError(
            f"dimension mismatch: mask {m.width}x{m.height} vs depth {z.width}x{z.height}"
        )
    fg = m.decode()
    vals = z.values[fg]
    if vals.size == 0:
        raise ValueError("empty mask: no foreground pixels to aggregate")
    lo, hi = float(vals.min()), float(vals.max())
    # Accumulation rounding can push the mean an ulp outside [min, max].
    mean = min(max(float(vals.mean()), lo), hi)
    return DepthStats(
        mean=mean,
        min=lo,
        max=hi,
        variance=float(vals.var()),
        pixel_count=int(vals.size),
    )


@dataclass(frozen=True)
class InstanceRecord:
    """One object instance in one frame.

    ``id`` is track-stable: the same physical object keeps its id across
    frames. ``derived`` is an open key->value map populated by tool execution;
    values are JSON scalars and keys are namespaced by tool name.
    """

    id: int
    mask: Mask
    depth_stats: DepthStats
    mean_depth: float
    semantic_label: str
    confidence: float = 1.0
    bbox: tuple[int, int, int, int] | None = None
    derived: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        path = f"instances[id={self.id}]"
        object.__setattr__(self, "mean_depth", float(self.mean_depth))
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(self, "derived", dict(self.derived))
        if isinstance(self.id, bool) or not isinstance(self.id, int):
            raise TwinValidationError(path, "id must be an integer")
        if self.mask.area() == 0:
            raise TwinValidationError(path, "instance mask has no foreground pixels")
        if self.mean_depth != self.depth_stats.mean:
            raise TwinValidationError(
                path,
                f"mean_depth {self.mean_depth!r} != depth_stats.mean {self.depth_stats.mean!r}",
            )
        tight = self.mask.bbox()
        if self.bbox is None:
            object.__setattr__(self, "bbox", tight)
        else:
            object.__setattr__(self, "bbox", tuple(int(v) for v in self.bbox))
            if self.bbox != tight:
                raise TwinValidationError(
                    path, f"bbox {self.bbox} is not the tight bounding box {tight} of the mask"
                )
        if not (0.0 <= self.confidence <= 1.0):
            raise TwinValidationError(path, f"confidence {self.confidence} outside [0, 1]")
        for key, value in self.derived.items():
            if not isinstance(key, str):
                raise TwinValidationError(path, f"derived key {key!r} must be a string")
            if not isinstance(value, _DERIVED_SCALARS):
                raise TwinValidationError(
                    path, f"derived[{key!r}] must be a JSON scalar, got {type(value).__name__}"
                )

    def with_derived(self, updates: Mapping[str, Any]) -> "InstanceRecord":
        merged = dict(self.derived)
        merged.update(updates)
        return InstanceRecord(
            id=self.id,
            mask=self.mask,
            depth_stats=self.depth_stats,
            mean_depth=self.mean_depth,
            semantic_label=self.semantic_label,
            confidence=self.confidence,
            bbox=self.bbox,
            derived=merged,
        )


@dataclass(frozen=True)
class TwinFrame:
    """All instances of one frame; ``t`` is 1-based."""

    t: int
    instances: tuple[InstanceRecord, ...] = ()

    def __post_init__(self) -> None:
        path = f"frames[t={self.t}]"
        if isinstance(self.t, bool) or not isinstance(self.t, int) or self.t < 1:
            raise TwinValidationError(path, f"t must be an integer >= 1, got {self.t!r}")
        records = tuple(sorted(self.instances, key=lambda r: r.id))
        object.__setattr__(self, "instances", records)
        ids = [r.id for r in records]
        if len(ids) != len(set(ids)):
            raise TwinValidationError(path, f"duplicate instance ids {sorted(ids)}")
        dims = {(r.mask.width, r.mask.height) for r in records}
        if len(dims) > 1:
            raise TwinValidationError(path, f"masks disagree on raster dimensions: {sorted(dims)}")

    def instance(self, instance_id: int) -> InstanceRecord | None:
        for record in self.instances:
            if record.id == instance_id:
                return record
        return None

    @property
    def dims(self) -> tuple[int, int] | None:
        if not self.instances:
            return None
        m = self.instances[0].mask
        return (m.width, m.height)


@dataclass(frozen=True)
class TwinSequence:
    """The full twin: frames indexed 1..T. A static image is T=1."""

    frames: tuple[TwinFrame, ...]
    source: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "source", dict(self.source))
        if not frames:
            raise TwinValidationError("frames", "twin must contain at least one frame")
        for i, frame in enumerate(frames):
            if frame.t != i + 1:
                raise TwinValidationError(
                    f"frames[{i}]", f"frame index must be consecutive from 1, got t={frame.t}"
                )
        dims = {f.dims for f in frames if f.dims is not None}
        if len(dims) > 1:
            raise TwinValidationError("frames", f"frames disagree on raster dimensions: {sorted(dims)}")
        for key, value in self.source.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise TwinValidationError("source", "source must map strings to strings")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def dims(self) -> tuple[int, int] | None:
        for frame in self.frames:
            if frame.dims is not None:
                return frame.dims
        return None

    def frame(self, t: int) -> TwinFrame:
        if not (1 <= t <= len(self.frames)):
            raise IndexError(f"frame {t} outside 1..{len(self.frames)}")
        return self.frames[t - 1]

    def instance(self, t: int, instance_id: int) -> InstanceRecord | None:
        return self.frame(t).instance(instance_id)

    def ids(self) -> tuple[int, ...]:
        """Sorted union of instance ids over all frames."""
        seen: set[int] = set()
        for frame in self.frames:
            seen.update(r.id for r in frame.instances)
        return tuple(sorted(seen))

    def presence(self, instance_id: int) -> tuple[int, ...]:
        """Frame indices where the instance appears."""
        return tuple(f.t for f in self.frames if f.instance(instance_id) is not None)


# --- canonical JSON form ---------------------------------------------------


def _mask_to_json(m: Mask) -> dict[str, Any]:
    return {"width": m.width, "height": m.height, "runs": list(m.runs)}


def _stats_to_json(s: DepthStats) -> dict[str, Any]:
    return {
        "mean": s.mean,
        "min": s.min,
        "max": s.max,
        "variance": s.variance,
        "pixel_count": s.pixel_count,
    }


def serialize_twin(seq: TwinSequence) -> str:
    """Canonical JSON text: fixed key order, instances sorted by id, frames by
    t, compact separators. Byte-identical for equal twins."""
    doc: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "source": {k: seq.source[k] for k in sorted(seq.source)},
        "frames": [
            {
                "t": frame.t,
                "instances": [
                    {
                        "id": r.id,
                        "mask": _mask_to_json(r.mask),
                        "depth_stats": _stats_to_json(r.depth_stats),
                        "mean_depth": r.mean_depth,
                        "semantic_label": r.semantic_label,
                        "x_bbox": list(r.bbox or ()),
                        "x_confidence": r.confidence,
                        "x_derived": {k: r.derived[k] for k in sorted(r.derived)},
                    }
                    for r in frame.instances
                ],
            }
            for frame in seq.frames
        ],
    }
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=True)


def _require(obj: Mapping[str, Any], key: str, path: str) -> Any:
    if key not in obj:
        raise TwinValidationError(path, f"missing required key {key!r}")
    return obj[key]


def _reject_unknown(obj: Mapping[str, Any], allowed: Iterable[str], path: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise TwinValidationError(path, f"unknown keys {unknown}")


def _float_field(value: Any, path: str, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TwinValidationError(path, f"{name} must be a number, got {value!r}")
    return float(value)


def _load_mask_png(path: Path) -> Mask:
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return encode_mask(arr > 0)


def _parse_mask(obj: Any, path: str, base_dir: Path | None) -> Mask:
    if not isinstance(obj, dict):
        raise TwinValidationError(path, "mask must be an object")
    if "path" in obj:
        _reject_unknown(obj, ("path",), path)
        if not isinstance(obj["path"], str):
            raise TwinValidationError(path, "mask path must be a string")
        if base_dir is None:
            raise TwinValidationError(path, "mask is a file reference but no base directory was given")
        target = base_dir / obj["path"]
        if not target.is_file():
            raise TwinValidationError(path, f"mask file {obj['path']!r} not found under {base_dir}")
        try:
            return _load_mask_png(target)
        except Exception as exc:  # corrupt image file
            raise TwinValidationError(path, f"failed to load mask file {obj['path']!r}: {exc}") from exc
    _reject_unknown(obj, ("width", "height", "runs"), path)
    width = _as_int(_require(obj, "width", path), path, "width")
    height = _as_int(_require(obj, "height", path), path, "height")
    runs = _require(obj, "runs", path)
    if not isinstance(runs, list) or not all(
        isinstance(r, int) and not isinstance(r, bool) for r in runs
    ):
        raise TwinValidationError(path, "runs must be a list of integers")
    try:
        return Mask(width, height, tuple(runs))
    except TwinValidationError as exc:
        raise TwinValidationError(path, exc.message) from exc


def _parse_stats(obj: Any, path: str) -> DepthStats:
    if not isinstance(obj, dict):
        raise TwinValidationError(path, "depth_stats must be an object")
    _reject_unknown(obj, ("mean", "min", "max", "variance", "pixel_count"), path)
    try:
        return DepthStats(
            mean=_float_field(_require(obj, "mean", path), path, "mean"),
            min=_float_field(_require(obj, "min", path), path, "min"),
            max=_float_field(_require(obj, "max", path), path, "max"),
            variance=_float_field(_require(obj, "variance", path), path, "variance"),
            pixel_count=_as_int(_require(obj, "pixel_count", path), path, "pixel_count"),
        )
    except TwinValidationError as exc:
        if exc.path == path:
            raise
        raise TwinValidationError(path, exc.message) from exc


def _parse_instance(obj: Any, frame_path: str, base_dir: Path | None) -> InstanceRecord:
    if not isinstance(obj, dict):
        raise TwinValidationError(frame_path, "instance must be an object")
    instance_id = _as_int(_require(obj, "id", frame_path), frame_path, "id")
    path = f"{frame_path}.instances[id={instance_id}]"
    _reject_unknown(obj, ("id",) + CORE_KEYS + EXTENSION_KEYS, path)
    mask = _parse_mask(_require(obj, "mask", path), f"{path}.mask", base_dir)
    stats = _parse_stats(_require(obj, "depth_stats", path), f"{path}.depth_stats")
    mean_depth = _float_field(_require(obj, "mean_depth", path), path, "mean_depth")
    label = _require(obj, "semantic_label", path)
    if not isinstance(label, str):
        raise TwinValidationError(path, "semantic_label must be a string")
    bbox = obj.get("x_bbox")
    if bbox is not None:
        if not (isinstance(bbox, list) and len(bbox) == 4):
            raise TwinValidationError(path, "x_bbox must be a 4-element list")
        bbox = tuple(_as_int(v, path, "x_bbox element") for v in bbox)
    confidence = obj.get("x_confidence", 1.0)
    derived = obj.get("x_derived", {})
    if not isinstance(derived, dict):
        raise TwinValidationError(path, "x_derived must be an object")
    try:
        return InstanceRecord(
            id=instance_id,
            mask=mask,
            depth_stats=stats,
            mean_depth=mean_depth,
            semantic_label=label,
            confidence=_float_field(confidence, path, "x_confidence"),
            bbox=bbox,
            derived=derived,
        )
    except TwinValidationError as exc:
        raise TwinValidationError(path, exc.message) from exc


def parse_twin(text: str, base_dir: Path | str | None = None) -> TwinSequence:
    """Parse and validate the canonical twin JSON.

    ``base_dir`` resolves masks stored as file references instead of inline
    runs. Every rejection carries the frame/instance path of the violation.
    """
    base = Path(base_dir) if base_dir is not None else None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TwinValidationError("$", f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise TwinValidationError("$", "top level must be an object")
    _reject_unknown(doc, ("schema_version", "source", "frames"), "$")
    version = _require(doc, "schema_version", "$")
    if version != SCHEMA_VERSION:
        raise TwinValidationError(
            "$", f"unsupported schema_version {version!r}, expected {SCHEMA_VERSION!r}"
        )
    source = doc.get("source", {})
    if not isinstance(source, dict):
        raise TwinValidationError("source", "source must be an object")
    frames_doc = _require(doc, "frames", "$")
    if not isinstance(frames_doc, list):
        raise TwinValidationError("frames", "frames must be a list")
    frames: list[TwinFrame] = []
    for i, frame_obj in enumerate(frames_doc):
        frame_path = f"frames[{i}]"
        if not isinstance(frame_obj, dict):
            raise TwinValidationError(frame_path, "frame must be an object")
        _reject_unknown(frame_obj, ("t", "instances"), frame_path)
        t = _as_int(_require(frame_obj, "t", frame_path), frame_path, "t")
        inst_doc = _require(frame_obj, "instances", frame_path)
        if not isinstance(inst_doc, list):
            raise TwinValidationError(frame_path, "instances must be a list")
        records = [_parse_instance(o, frame_path, base) for o in inst_doc]
        try:
            frames.append(TwinFrame(t=t, instances=tuple(records)))
        except TwinValidationError as exc:
            raise TwinValidationError(frame_path, exc.message) from exc
    try:
        return TwinSequence(frames=tuple(frames), source=source)
    except TwinValidationError as exc:
        if exc.path.startswith("frames") or exc.path == "source":
            raise
        raise TwinValidationError("$", exc.message) from exc

"""Tool vocabulary and plan executor.

Executing a plan refines a twin: each tool writes derived annotations onto
instance records without touching masks, depths, or labels. The executor is
pure (the input twin is never mutated) and never raises for bad plans; an
unknown tool, malformed args, or a missing instance becomes a per-call
failure in the execution report. Calls run sequentially in plan order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from .rollout import ToolCall
from .twin import InstanceRecord, TwinFrame, TwinSequence

# A write is (frame t, instance id, derived key, value).
Write = tuple[int, int, str, Any]


class ToolCallError(Exception):
    """Whole-call failure with a short machine-readable reason."""

    def __init__(self, reason: str, message: str) -> None:
        self.reason = reason
        super().__init__(message)


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    required: Mapping[str, str] = field(default_factory=dict)
    optional: Mapping[str, str] = field(default_factory=dict)
    writes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "required", dict(self.required))
        object.__setattr__(self, "optional", dict(self.optional))
        for key in self.writes:
            if not key.startswith(self.name):
                raise ValueError(f"derived key {key!r} is not namespaced by tool {self.name!r}")


@dataclass(frozen=True)
class CallReport:
    index: int
    tool: str
    status: str  # "ok" | "failed"
    reason: str | None = None
    frames_failed: tuple[int, ...] = ()
    keys_written: tuple[str, ...] = ()
    wall_ms: float = 0.0


@dataclass(frozen=True)
class ExecutionReport:
    calls: tuple[CallReport, ...] = ()

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.calls if c.status == "failed")


ToolImpl = Callable[[TwinSequence, Mapping[str, Any]], tuple[list[Write], list[int]]]


class ToolRegistry:
    """Name -> (spec, implementation); names unique, extensible."""

    def __init__(self) -> None:
        self._tools: dict[str, tuple[ToolSpec, ToolImpl]] = {}

    def register(self, spec: ToolSpec, impl: ToolImpl) -> None:
        if spec.name in self._tools:
            raise ValueError(f"tool {spec.name!r} already registered")
        self._tools[spec.name] = (spec, impl)

    def get(self, name: str) -> tuple[ToolSpec, ToolImpl] | None:
        return self._tools.get(name)

    def names(self) -> tuple[str, ...]:
        return tuple(self._tools)

    def manifest(self) -> list[dict[str, Any]]:
        """JSON-able description of every tool; embedded into policy prompts."""
        out = []
        for name in sorted(self._tools):
            spec, _ = self._tools[name]
            out.append(
                {
                    "name": spec.name,
                    "description": spec.description,
                    "args": {"required": dict(spec.required), "optional": dict(spec.optional)},
                    "writes": list(spec.writes),
                }
            )
        return out


def _check_args(spec: ToolSpec, args: Mapping[str, Any]) -> str | None:
    allowed = set(spec.required) | set(spec.optional)
    unknown = sorted(set(args) - allowed)
    if unknown:
        return f"unknown args {unknown}"
    for key, kind in spec.required.items():
        if key not in args:
            return f"missing required arg {key!r}"
    for key, value in args.items():
        kind = spec.required.get(key, spec.optional.get(key))
        if kind == "integer" and (isinstance(value, bool) or not isinstance(value, int)):
            return f"arg {key!r} must be an integer"
        if kind == "string" and not isinstance(value, str):
            return f"arg {key!r} must be a string"
    return None


def execute_plan(
    plan: Sequence[ToolCall],
    twin: TwinSequence,
    registry: "ToolRegistry | None" = None,
) -> tuple[TwinSequence, ExecutionReport]:
    """Run every call in order; failed calls are recorded and skipped."""
    reg = registry or default_registry()
    pending: dict[tuple[int, int], dict[str, Any]] = {}
    reports: list[CallReport] = []
    for index, call in enumerate(plan):
        start = time.perf_counter()
        entry = reg.get(call.name)
        if entry is None:
            reports.append(_failed(index, call, "unknown-tool", start))
            continue
        spec, impl = entry
        problem = _check_args(spec, call.args)
        if problem is not None:
            reports.append(_failed(index, call, "bad-args", start, problem))
            continue
        try:
            writes, frames_failed = impl(twin, call.args)
        except ToolCallError as exc:
            reports.append(_failed(index, call, exc.reason, start, str(exc)))
            continue
        except Exception as exc:  # defensive: tool bugs must not kill the plan
            reports.append(_failed(index, call, "internal-error", start, repr(exc)))
            continue
        keys = []
        for t, instance_id, key, value in writes:
            pending.setdefault((t, instance_id), {})[key] = value
            keys.append(key)
        reports.append(
            CallReport(
                index=index,
                tool=call.name,
                status="ok",
                frames_failed=tuple(frames_failed),
                keys_written=tuple(sorted(set(keys))),
                wall_ms=(time.perf_counter() - start) * 1000.0,
            )
        )
    if not pending:
        return twin, ExecutionReport(tuple(reports))
    frames = []
    for frame in twin.frames:
        records = []
        for record in frame.instances:
            updates = pending.get((frame.t, record.id))
            records.append(record.with_derived(updates) if updates else record)
        frames.append(TwinFrame(t=frame.t, instances=tuple(records)))
    refined = TwinSequence(frames=tuple(frames), source=twin.source)
    return refined, ExecutionReport(tuple(reports))


def _failed(index: int, call: ToolCall, reason: str, start: float, message: str = "") -> CallReport:
    return CallReport(
        index=index,
        tool=call.name,
        status="failed",
        reason=reason,
        wall_ms=(time.perf_counter() - start) * 1000.0,
    )


# --- tool implementations ---------------------------------------------------


def _presence(twin: TwinSequence, instance_id: int) -> list[TwinFrame]:
    return [f for f in twin.frames if f.instance(instance_id) is not None]


def _require_presence(twin: TwinSequence, instance_id: int) -> list[TwinFrame]:
    frames = _presence(twin, instance_id)
    if not frames:
        raise ToolCallError("missing-instance", f"instance {instance_id} absent in every frame")
    return frames


def _tool_size(twin: TwinSequence, args: Mapping[str, Any]) -> tuple[list[Write], list[int]]:
    instance_id = args["id"]
    writes: list[Write] = []
    for frame in _require_presence(twin, instance_id):
        record = frame.instance(instance_id)
        assert record is not None
        writes.append((frame.t, instance_id, "size_px", record.mask.area()))
    return writes, []


def _pairwise(
    twin: TwinSequence, a: int, b: int
) -> tuple[list[tuple[TwinFrame, InstanceRecord, InstanceRecord]], list[int]]:
    if a == b:
        raise ToolCallError("bad-args", "instance ids a and b must differ")
    both: list[tuple[TwinFrame, InstanceRecord, InstanceRecord]] = []
    failed: list[int] = []
    for frame in twin.frames:
        ra, rb = frame.instance(a), frame.instance(b)
        if ra is not None and rb is not None:
            both.append((frame, ra, rb))
        elif ra is not None or rb is not None:
            failed.append(frame.t)
    if not both:
        raise ToolCallError("missing-instance", f"instances {a} and {b} never co-occur")
    return both, failed


def _tool_relative_depth(twin: TwinSequence, args: Mapping[str, Any]) -> tuple[list[Write], list[int]]:
    a, b = args["a"], args["b"]
    both, failed = _pairwise(twin, a, b)
    writes: list[Write] = []
    for frame, ra, rb in both:
        if ra.mean_depth < rb.mean_depth:
            va, vb = "nearer", "farther"
        elif ra.mean_depth > rb.mean_depth:
            va, vb = "farther", "nearer"
        else:
            va = vb = "tie"
        writes.append((frame.t, a, f"relative_depth:vs:{b}", va))
        writes.append((frame.t, b, f"relative_depth:vs:{a}", vb))
    return writes, failed


def spatial_relation(a_centroid: tuple[float, float], b_centroid: tuple[float, float]) -> str:
    """Relation of a to b; horizontal wins when |dx| >= |dy|."""
    dx = a_centroid[0] - b_centroid[0]
    dy = a_centroid[1] - b_centroid[1]
    if dx == 0.0 and dy == 0.0:
        return "coincident"
    if abs(dx) >= abs(dy):
        return "left_of" if dx < 0 else "right_of"
    return "above" if dy < 0 else "below"


def _tool_spatial_relation(twin: TwinSequence, args: Mapping[str, Any]) -> tuple[list[Write], list[int]]:
    a, b = args["a"], args["b"]
    both, failed = _pairwise(twin, a, b)
    writes: list[Write] = []
    for frame, ra, rb in both:
        rel = spatial_relation(ra.mask.centroid(), rb.mask.centroid())
        writes.append((frame.t, a, f"spatial_relation:{rel}:{b}", True))
    return writes, failed


def _tool_distance_2d(twin: TwinSequence, args: Mapping[str, Any]) -> tuple[list[Write], list[int]]:
    a, b = args["a"], args["b"]
    both, failed = _pairwise(twin, a, b)
    writes: list[Write] = []
    for frame, ra, rb in both:
        ca, cb = ra.mask.centroid(), rb.mask.centroid()
        dist = math.hypot(ca[0] - cb[0], ca[1] - cb[1])
        writes.append((frame.t, a, f"distance_2d:to:{b}", dist))
        writes.append((frame.t, b, f"distance_2d:to:{a}", dist))
    return writes, failed


def _tool_depth_rank(twin: TwinSequence, args: Mapping[str, Any]) -> tuple[list[Write], list[int]]:
    writes: list[Write] = []
    for frame in twin.frames:
        depths = {r.id: r.mean_depth for r in frame.instances}
        for instance_id, depth in depths.items():
            # Competition ranking: ties share the smaller rank.
            rank = 1 + sum(1 for other in depths.values() if other < depth)
            writes.append((frame.t, instance_id, "depth_rank", rank))
    return writes, []


def _tool_temporal_span(twin: TwinSequence, args: Mapping[str, Any]) -> tuple[list[Write], list[int]]:
    instance_id = args["id"]
    frames = _require_presence(twin, instance_id)
    first, last, count = frames[0].t, frames[-1].t, len(frames)
    writes: list[Write] = []
    for frame in frames:
        writes.append((frame.t, instance_id, "temporal_span:first_frame", first))
        writes.append((frame.t, instance_id, "temporal_span:last_frame", last))
        writes.append((frame.t, instance_id, "temporal_span:n_frames", count))
    return writes, []


def _tool_motion(twin: TwinSequence, args: Mapping[str, Any]) -> tuple[list[Write], list[int]]:
    instance_id = args["id"]
    frames = _require_presence(twin, instance_id)
    centroids = []
    for frame in frames:
        record = frame.instance(instance_id)
        assert record is not None
        centroids.append((frame.t, record.mask.centroid()))
    dx = centroids[-1][1][0] - centroids[0][1][0]
    dy = centroids[-1][1][1] - centroids[0][1][1]
    if len(centroids) < 2:
        speed = 0.0  # single-frame presence: no intervals
    else:
        path = sum(
            math.hypot(c2[0] - c1[0], c2[1] - c1[1])
            for (_, c1), (_, c2) in zip(centroids, centroids[1:])
        )
        elapsed = centroids[-1][0] - centroids[0][0]
        speed = path / elapsed
    writes: list[Write] = []
    for frame in frames:
        writes.append((frame.t, instance_id, "motion:dx", dx))
        writes.append((frame.t, instance_id, "motion:dy", dy))
        writes.append((frame.t, instance_id, "motion:speed", speed))
    return writes, []


def _tool_filter_label(twin: TwinSequence, args: Mapping[str, Any]) -> tuple[list[Write], list[int]]:
    pattern = args["label"].lower()
    writes: list[Write] = []
    for frame in twin.frames:
        for record in frame.instances:
            matched = pattern in record.semantic_label.lower()
            writes.append((frame.t, record.id, f"filter_label:{args['label']}", matched))
    return writes, []


_SPECS: tuple[tuple[ToolSpec, ToolImpl], ...] = (
    (
        ToolSpec(
            "size",
            "Foreground pixel count of an instance, per frame where it appears.",
            required={"id": "integer"},
            writes=("size_px",),
        ),
        _tool_size,
    ),
    (
        ToolSpec(
            "relative_depth",
            "Which of two instances is nearer the camera by mean depth, per shared frame.",
            required={"a": "integer", "b": "integer"},
            writes=("relative_depth:vs:<id>",),
        ),
        _tool_relative_depth,
    ),
    (
        ToolSpec(
            "spatial_relation",
            "left_of/right_of/above/below of instance a relative to b from mask centroids.",
            required={"a": "integer", "b": "integer"},
            writes=("spatial_relation:<relation>:<id>",),
        ),
        _tool_spatial_relation,
    ),
    (
        ToolSpec(
            "distance_2d",
            "Euclidean centroid distance in pixels between two instances, per shared frame.",
            required={"a": "integer", "b": "integer"},
            writes=("distance_2d:to:<id>",),
        ),
        _tool_distance_2d,
    ),
    (
        ToolSpec(
            "depth_rank",
            "Rank of every instance by mean depth per frame; rank 1 is nearest, ties share the smaller rank.",
            writes=("depth_rank",),
        ),
        _tool_depth_rank,
    ),
    (
        ToolSpec(
            "temporal_span",
            "First frame, last frame, and frame count of an instance's presence.",
            required={"id": "integer"},
            writes=("temporal_span:first_frame", "temporal_span:last_frame", "temporal_span:n_frames"),
        ),
        _tool_temporal_span,
    ),
    (
        ToolSpec(
            "motion",
            "Net centroid displacement from first to last presence frame plus mean per-frame speed.",
            required={"id": "integer"},
            writes=("motion:dx", "motion:dy", "motion:speed"),
        ),
        _tool_motion,
    ),
    (
        ToolSpec(
            "filter_label",
            "Case-insensitive substring match of a pattern against every semantic label.",
            required={"label": "string"},
            writes=("filter_label:<pattern>",),
        ),
        _tool_filter_label,
    ),
)

_DEFAULT: ToolRegistry | None = None


def default_registry() -> ToolRegistry:
    global _DEFAULT
    if _DEFAULT is None:
        registry = ToolRegistry()
        for spec, impl in _SPECS:
            registry.register(spec, impl)
        _DEFAULT = registry
    return _DEFAULT

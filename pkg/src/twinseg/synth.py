"""Deterministic synthetic scenes with exact ground truth.

Scenes are noise-free rasterizations of rectangle and disc tracks with
constant per-shape depth, so every downstream number has an exact pixel
oracle. Each generated scene also instantiates query templates whose correct
answer is known by construction; a scripted policy can solve them from the
query text alone. Same seed means byte-identical output.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .rollout import AnswerBlock
from .tools import spatial_relation
from .twin import (
    DepthMap,
    InstanceRecord,
    Mask,
    TwinFrame,
    TwinSequence,
    compute_depth_stats,
    encode_mask,
    mask_iou,
    union_masks,
)

COLOR_NAMES = ("red", "green", "blue", "yellow", "purple", "orange", "cyan", "magenta")
KIND_WORDS = {"rect": "rectangle", "disc": "disc"}

CATEGORY_SEMANTIC = "semantic"
CATEGORY_SPATIAL = "spatial"
CATEGORY_TEMPORAL = "temporal"

BACKGROUND_DEPTH = 100.0

# Fixed query grammar. A scripted policy parses these without an LLM.
TPL_LABEL = "segment the {label}."
TPL_CLOSEST = "segment the object closest to the camera."
TPL_FARTHEST = "segment the object farthest from the camera."
TPL_LARGEST = "segment the largest object."
TPL_LEFT_OF = "segment the object to the left of the {anchor}."
TPL_RIGHT_OF = "segment the object to the right of the {anchor}."
TPL_APPEARS_LAST = "segment the object that appears last."
TPL_APPEARS_FIRST = "segment the object that appears first."
TPL_MOVES = "segment the object that moves {direction}."


class SceneSpecError(ValueError):
    """The scene description violates a generator invariant."""


@dataclass(frozen=True)
class ShapeTrack:
    """One shape's life: kind, extent, constant depth, linear integer motion."""

    id: int
    kind: str  # "rect" | "disc"
    size: tuple[int, int]  # rect: (w, h); disc: (r, r)
    color: str
    depth: float
    start: tuple[int, int]  # center at first_frame
    velocity: tuple[int, int] = (0, 0)  # px/frame
    first_frame: int = 1
    last_frame: int = 1

    def __post_init__(self) -> None:
        if self.kind not in KIND_WORDS:
            raise SceneSpecError(f"unknown shape kind {self.kind!r}")
        if self.color not in COLOR_NAMES:
            raise SceneSpecError(f"unknown color {self.color!r}")
        if self.first_frame < 1 or self.last_frame < self.first_frame:
            raise SceneSpecError(
                f"invalid presence span {self.first_frame}..{self.last_frame}"
            )
        if min(self.size) < 1:
            raise SceneSpecError(f"shape size must be positive, got {self.size}")
        if self.depth <= 0 or self.depth >= BACKGROUND_DEPTH:
            raise SceneSpecError(
                f"depth must lie in (0, {BACKGROUND_DEPTH}), got {self.depth}"
            )

    @property
    def label(self) -> str:
        return f"{self.color} {KIND_WORDS[self.kind]}"

    def present(self, t: int) -> bool:
        return self.first_frame <= t <= self.last_frame

    def center(self, t: int) -> tuple[int, int]:
        dt = t - self.first_frame
        return (self.start[0] + self.velocity[0] * dt, self.start[1] + self.velocity[1] * dt)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    n_frames: int
    width: int
    height: int
    shapes: tuple[ShapeTrack, ...]
    allow_depth_ties: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "shapes", tuple(self.shapes))
        if self.n_frames < 1:
            raise SceneSpecError("n_frames must be >= 1")
        if self.width < 1 or self.height < 1:
            raise SceneSpecError("raster dimensions must be positive")
        ids = [s.id for s in self.shapes]
        if len(ids) != len(set(ids)):
            raise SceneSpecError(f"duplicate shape ids {sorted(ids)}")
        for shape in self.shapes:
            if shape.last_frame > self.n_frames:
                raise SceneSpecError(
                    f"shape {shape.id} present through frame {shape.last_frame} "
                    f"but the scene has {self.n_frames} frames"
                )
        if not self.allow_depth_ties:
            depths = [s.depth for s in self.shapes]
            if len(depths) != len(set(depths)):
                raise SceneSpecError("depth values must be distinct unless ties are requested")


@dataclass(frozen=True)
class QueryCase:
    """A query whose answer is known by construction; gt masks are the
    per-frame union of the gt ids' masks."""

    query: str
    category: str
    difficulty: str
    gt_ids: tuple[int, ...]
    gt_masks: tuple[Mask, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "gt_ids", tuple(self.gt_ids))
        object.__setattr__(self, "gt_masks", tuple(self.gt_masks))
        if self.category not in (CATEGORY_SEMANTIC, CATEGORY_SPATIAL, CATEGORY_TEMPORAL):
            raise ValueError(f"unknown category {self.category!r}")


def _rasterize(shape: ShapeTrack, t: int, width: int, height: int) -> np.ndarray:
    cx, cy = shape.center(t)
    grid = np.zeros((height, width), dtype=bool)
    if shape.kind == "rect":
        w, h = shape.size
        x0, y0 = cx - w // 2, cy - h // 2
        xa, xb = max(0, x0), min(width, x0 + w)
        ya, yb = max(0, y0), min(height, y0 + h)
        if xa < xb and ya < yb:
            grid[ya:yb, xa:xb] = True
    else:
        r = shape.size[0]
        ys, xs = np.ogrid[:height, :width]
        grid = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    return grid


def render_frame(spec: SceneSpec, t: int) -> tuple[dict[int, np.ndarray], DepthMap]:
    """Visible (occlusion-clipped) masks per shape id plus the composite depth
    map for frame t. Nearer shapes win overlaps; equal depths resolve to the
    higher id."""
    depth = np.full((spec.height, spec.width), BACKGROUND_DEPTH, dtype=np.float64)
    owner = np.full((spec.height, spec.width), -1, dtype=np.int64)
    # Paint far to near so the nearest shape ends up on top.
    order = sorted(
        (s for s in spec.shapes if s.present(t)), key=lambda s: (-s.depth, s.id)
    )
    for shape in order:
        raster = _rasterize(shape, t, spec.width, spec.height)
        depth[raster] = shape.depth
        owner[raster] = shape.id
    visible = {}
    for shape in order:
        visible[shape.id] = owner == shape.id
    return visible, DepthMap(spec.width, spec.height, depth)


def generate(spec: SceneSpec) -> tuple[TwinSequence, list[QueryCase]]:
    """Exact twin plus every query template applicable to this scene."""
    frames: list[TwinFrame] = []
    visible_by_frame: list[dict[int, Mask]] = []
    by_id = {s.id: s for s in spec.shapes}
    for t in range(1, spec.n_frames + 1):
        visible, depth_map = render_frame(spec, t)
        records = []
        frame_masks: dict[int, Mask] = {}
        for shape_id, raster in sorted(visible.items()):
            if not raster.any():
                raise SceneSpecError(
                    f"shape {shape_id} is fully occluded or out of raster in frame {t}"
                )
            mask = encode_mask(raster)
            frame_masks[shape_id] = mask
            stats = compute_depth_stats(mask, depth_map)
            records.append(
                InstanceRecord(
                    id=shape_id,
                    mask=mask,
                    depth_stats=stats,
                    mean_depth=stats.mean,
                    semantic_label=by_id[shape_id].label,
                    confidence=1.0,
                )
            )
        frames.append(TwinFrame(t=t, instances=tuple(records)))
        visible_by_frame.append(frame_masks)
    twin = TwinSequence(
        frames=tuple(frames), source={"video_id": f"synthetic-{spec.seed}", "extractor": "synth"}
    )
    queries = _instantiate_queries(spec, twin, visible_by_frame)
    return twin, queries


def _gt_masks(
    spec: SceneSpec, visible_by_frame: list[dict[int, Mask]], ids: Sequence[int]
) -> tuple[Mask, ...]:
    out = []
    for frame_masks in visible_by_frame:
        masks = [frame_masks[i] for i in ids if i in frame_masks]
        out.append(union_masks(masks, spec.width, spec.height))
    return tuple(out)


def _difficulty(spec: SceneSpec) -> str:
    n = len(spec.shapes)
    if n <= 2:
        return "level1"
    if n <= 3:
        return "level2"
    return "level3"


def _full_span(spec: SceneSpec, shape: ShapeTrack) -> bool:
    return shape.first_frame == 1 and shape.last_frame == spec.n_frames


def _unique_argopt(values: Mapping[int, float], largest: bool) -> int | None:
    if not values:
        return None
    best = max(values.values()) if largest else min(values.values())
    winners = [i for i, v in values.items() if v == best]
    return winners[0] if len(winners) == 1 else None


def _instantiate_queries(
    spec: SceneSpec, twin: TwinSequence, visible_by_frame: list[dict[int, Mask]]
) -> list[QueryCase]:
    difficulty = _difficulty(spec)
    cases: list[QueryCase] = []

    def add(query: str, category: str, ids: Sequence[int]) -> None:
        cases.append(
            QueryCase(
                query=query,
                category=category,
                difficulty=difficulty,
                gt_ids=tuple(sorted(ids)),
                gt_masks=_gt_masks(spec, visible_by_frame, ids),
            )
        )

    labels = [s.label for s in spec.shapes]
    for shape in spec.shapes:
        if labels.count(shape.label) == 1:
            add(TPL_LABEL.format(label=shape.label), CATEGORY_SEMANTIC, [shape.id])

    # Depth extremes only when unambiguous and stable over the whole scene.
    stable = [s for s in spec.shapes if _full_span(spec, s)]
    if len(stable) == len(spec.shapes) and len(spec.shapes) >= 2:
        depths = {s.id: s.depth for s in spec.shapes}
        nearest = _unique_argopt(depths, largest=False)
        farthest = _unique_argopt(depths, largest=True)
        if nearest is not None:
            add(TPL_CLOSEST, CATEGORY_SPATIAL, [nearest])
        if farthest is not None:
            add(TPL_FARTHEST, CATEGORY_SPATIAL, [farthest])
        areas = {
            s.id: visible_by_frame[0][s.id].area()
            for s in spec.shapes
            if s.id in visible_by_frame[0]
        }
        if len(areas) == len(spec.shapes):
            constant = all(
                frame_masks.get(i) is not None and frame_masks[i].area() == areas[i]
                for frame_masks in visible_by_frame
                for i in areas
            )
            largest = _unique_argopt({i: float(a) for i, a in areas.items()}, largest=True)
            if constant and largest is not None:
                add(TPL_LARGEST, CATEGORY_SPATIAL, [largest])

    # Lateral relation relative to a uniquely labelled anchor, when exactly
    # one candidate holds the relation in every frame.
    static = [
        s
        for s in spec.shapes
        if _full_span(spec, s) and s.velocity == (0, 0) and labels.count(s.label) == 1
    ]
    if len(static) == len(spec.shapes) and len(spec.shapes) >= 2:
        for anchor in spec.shapes:
            relations: dict[int, set[str]] = {}
            for frame_masks in visible_by_frame:
                if anchor.id not in frame_masks:
                    continue
                anchor_c = frame_masks[anchor.id].centroid()
                for other_id, mask in frame_masks.items():
                    if other_id == anchor.id:
                        continue
                    relations.setdefault(other_id, set()).add(
                        spatial_relation(mask.centroid(), anchor_c)
                    )
            for template, wanted in ((TPL_LEFT_OF, "left_of"), (TPL_RIGHT_OF, "right_of")):
                holders = [
                    i for i, rels in relations.items() if rels == {wanted}
                ]
                if len(holders) == 1:
                    add(template.format(anchor=anchor.label), CATEGORY_SPATIAL, holders)

    firsts = {s.id: float(s.first_frame) for s in spec.shapes}
    if len(spec.shapes) >= 2 and len(set(firsts.values())) == len(firsts):
        last_in = _unique_argopt(firsts, largest=True)
        first_in = _unique_argopt(firsts, largest=False)
        if last_in is not None and firsts[last_in] > 1:
            add(TPL_APPEARS_LAST, CATEGORY_TEMPORAL, [last_in])
        if first_in is not None:
            add(TPL_APPEARS_FIRST, CATEGORY_TEMPORAL, [first_in])

    for direction, axis, sign in (
        ("right", 0, 1),
        ("left", 0, -1),
        ("down", 1, 1),
        ("up", 1, -1),
    ):
        movers = [
            s.id
            for s in spec.shapes
            if s.velocity[axis] * sign > 0 and abs(s.velocity[axis]) >= abs(s.velocity[1 - axis])
        ]
        if len(movers) == 1 and spec.n_frames >= 2:
            add(TPL_MOVES.format(direction=direction), CATEGORY_TEMPORAL, movers)

    return cases


# --- scene archetypes -------------------------------------------------------


def _grid_slots(width: int, height: int, cell: int) -> list[tuple[int, int]]:
    xs = range(cell // 2, width - cell // 2 + 1, cell)
    ys = range(cell // 2, height - cell // 2 + 1, cell)
    return [(x, y) for y in ys for x in xs]


def _sample_shapes(
    rng: random.Random,
    n_shapes: int,
    width: int,
    height: int,
    cell: int = 16,
) -> list[dict[str, Any]]:
    """Disjoint, fully in-raster shape seeds on a placement grid."""
    slots = _grid_slots(width, height, cell)
    if n_shapes > len(slots):
        raise SceneSpecError(f"cannot place {n_shapes} shapes on a {len(slots)}-slot grid")
    positions = rng.sample(slots, n_shapes)
    colors = rng.sample(COLOR_NAMES, n_shapes)
    depths = rng.sample(range(2, 90, 2), n_shapes)
    sizes = rng.sample(range(3, 3 + 2 * n_shapes, 2), n_shapes)  # distinct extents
    shapes = []
    for i in range(n_shapes):
        kind = rng.choice(("rect", "disc"))
        extent = sizes[i]
        size = (extent, extent) if kind == "rect" else (extent // 2 + 1, extent // 2 + 1)
        shapes.append(
            {
                "id": i + 1,
                "kind": kind,
                "size": size,
                "color": colors[i],
                "depth": float(depths[i]),
                "start": positions[i],
            }
        )
    return shapes


def make_scene(seed: int, category: str, width: int = 48, height: int = 48) -> SceneSpec:
    """One scene archetype per reasoning category."""
    rng = random.Random(seed)
    if category == CATEGORY_SEMANTIC:
        n_shapes = rng.randint(2, 4)
        n_frames = rng.randint(1, 3)
        seeds = _sample_shapes(rng, n_shapes, width, height)
        shapes = [
            ShapeTrack(last_frame=n_frames, **s)  # type: ignore[arg-type]
            for s in seeds
        ]
    elif category == CATEGORY_SPATIAL:
        n_shapes = rng.randint(2, 4)
        n_frames = rng.randint(1, 2)
        seeds = _sample_shapes(rng, n_shapes, width, height)
        shapes = [ShapeTrack(last_frame=n_frames, **s) for s in seeds]  # type: ignore[arg-type]
    elif category == CATEGORY_TEMPORAL:
        n_shapes = rng.randint(2, 3)
        n_frames = 6
        seeds = _sample_shapes(rng, n_shapes, width, height, cell=16)
        shapes = []
        # Shape 0 is a full-span axis-aligned mover, so appears-first and
        # moves-<dir> queries have a target present in every frame; the other
        # shapes enter at distinct later frames to make appears-last defined.
        entries = [1, *rng.sample(range(2, n_frames), n_shapes - 1)]
        direction = rng.choice(((1, 0), (-1, 0), (0, 1), (0, -1)))
        for i, s in enumerate(seeds):
            velocity = direction if i == 0 else (0, 0)
            shapes.append(
                ShapeTrack(
                    first_frame=entries[i],
                    last_frame=n_frames,
                    velocity=velocity,
                    **s,  # type: ignore[arg-type]
                )
            )
    else:
        raise SceneSpecError(f"unknown category {category!r}")
    return SceneSpec(seed=seed, n_frames=n_frames, width=width, height=height, shapes=tuple(shapes))


@dataclass(frozen=True)
class SuiteCase:
    scene_index: int
    twin: TwinSequence
    case: QueryCase


def make_suite(seed: int, n_scenes: int, width: int = 48, height: int = 48) -> list[SuiteCase]:
    """Round-robin archetype scenes; queries keep scene order.

    Suite queries are restricted to targets present in every frame (gt mask
    non-empty per frame), so a no-target answer scores exactly J = 0 and the
    oracle scores exactly 1.0.
    """
    categories = (CATEGORY_SEMANTIC, CATEGORY_SPATIAL, CATEGORY_TEMPORAL)
    out: list[SuiteCase] = []
    for i in range(n_scenes):
        category = categories[i % len(categories)]
        attempt = 0
        while True:
            scene_seed = seed * 100003 + i * 1009 + attempt
            try:
                spec = make_scene(scene_seed, category, width, height)
                twin, cases = generate(spec)
            except SceneSpecError:
                attempt += 1
                continue
            wanted = [
                c
                for c in cases
                if c.category == category and all(m.area() > 0 for m in c.gt_masks)
            ]
            if wanted:
                break
            attempt += 1  # rare: archetype produced no unambiguous query
        for case in wanted:
            out.append(SuiteCase(scene_index=i, twin=twin, case=case))
    return out


# --- reward-boundary fixtures ------------------------------------------------


@dataclass(frozen=True)
class PerturbedAnswer:
    """An answer with a known sequence IoU against the case's ground truth.

    Dilate/erode modes add a synthetic instance carrying the perturbed mask to
    the twin so the answer stays id-resolvable.
    """

    answer: AnswerBlock
    twin: TwinSequence
    expected_j: float


def _enumerate_j(pred: Sequence[Mask], gt: Sequence[Mask]) -> float:
    return float(np.mean([mask_iou(p, g) for p, g in zip(pred, gt)]))


def _morph(mask: Mask, k: int, grow: bool) -> Mask:
    raster = mask.decode()
    size = 2 * k + 1
    if grow:
        out = ndimage.maximum_filter(raster.astype(np.uint8), size=size, mode="constant") > 0
    else:
        out = ndimage.minimum_filter(raster.astype(np.uint8), size=size, mode="constant") > 0
    return encode_mask(out)


def perturb_answer(
    case: QueryCase, twin: TwinSequence, mode: str, k: int = 1
) -> PerturbedAnswer:
    """Construct an answer with an enumeration-computed expected IoU.

    Modes: ``wrong-id`` answers some other instance; ``dilate``/``erode``
    grow or shrink the gt mask by k pixels (Chebyshev).
    """
    if mode == "wrong-id":
        others = [i for i in twin.ids() if i not in case.gt_ids]
        if not others:
            raise ValueError("no non-gt instance available for wrong-id perturbation")
        wrong = others[0]
        answer = AnswerBlock(instances=(wrong,))
        pred = []
        dims = twin.dims
        assert dims is not None
        for frame in twin.frames:
            record = frame.instance(wrong)
            pred.append(record.mask if record else Mask.empty(*dims))
        return PerturbedAnswer(answer, twin, _enumerate_j(pred, case.gt_masks))
    if mode == "identity":
        answer = AnswerBlock(instances=case.gt_ids)
        return PerturbedAnswer(answer, twin, 1.0)
    if mode not in ("dilate", "erode"):
        raise ValueError(f"unknown perturbation mode {mode!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    synthetic_id = max(twin.ids(), default=0) + 1
    frames = []
    pred = []
    for frame, gt_mask in zip(twin.frames, case.gt_masks):
        perturbed = _morph(gt_mask, k, grow=(mode == "dilate"))
        pred.append(perturbed)
        if perturbed.area() == 0:
            if mode == "erode" and gt_mask.area() > 0:
                raise ValueError(f"erosion by {k} empties the mask in frame {frame.t}")
            frames.append(frame)
            continue
        donor = frame.instances[0] if frame.instances else None
        if donor is None:
            raise ValueError(f"frame {frame.t} has no instance to donate depth stats")
        stats = donor.depth_stats
        record = InstanceRecord(
            id=synthetic_id,
            mask=perturbed,
            depth_stats=stats,
            mean_depth=stats.mean,
            semantic_label="synthetic perturbation",
            confidence=1.0,
        )
        frames.append(TwinFrame(t=frame.t, instances=frame.instances + (record,)))
    perturbed_twin = TwinSequence(frames=tuple(frames), source=twin.source)
    answer = AnswerBlock(instances=(synthetic_id,))
    return PerturbedAnswer(answer, perturbed_twin, _enumerate_j(pred, case.gt_masks))

"""On-disk layout of synthetic case directories.

A cases directory holds one subdirectory per scene with the twin JSON, the
query list, and ground-truth mask PNGs:

    manifest.json                {"schema_version", "seed", "scenes": [...]}
    scene_0000/twin.json
    scene_0000/queries.jsonl     one query case per line
    scene_0000/gt/q000_f001.png  per-query per-frame ground truth

Masks are bilevel PNGs (0 background, 255 foreground). All writes are
deterministic: same seed, same bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from .distill import CaseBundle, PipelineError, read_jsonl
from .synth import SuiteCase, make_suite
from .twin import Mask, encode_mask, parse_twin, serialize_twin

MANIFEST_NAME = "manifest.json"


def write_mask_png(mask: Mask, path: Path) -> None:
    raster = mask.decode().astype(np.uint8) * 255
    image = Image.fromarray(raster, mode="L")
    image.save(path, format="PNG", optimize=False)


def read_mask_png(path: Path) -> Mask:
    with Image.open(path) as image:
        arr = np.asarray(image.convert("L"))
    return encode_mask(arr > 0)


def write_cases_dir(out_dir: Path, seed: int, n_scenes: int, width: int = 48, height: int = 48) -> int:
    """Generate a suite and write it; returns the number of query cases."""
    suite = make_suite(seed, n_scenes, width, height)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_scene: dict[int, list[SuiteCase]] = {}
    for item in suite:
        by_scene.setdefault(item.scene_index, []).append(item)
    scene_names = []
    n_cases = 0
    for scene_index in sorted(by_scene):
        scene_name = f"scene_{scene_index:04d}"
        scene_names.append(scene_name)
        scene_dir = out_dir / scene_name
        (scene_dir / "gt").mkdir(parents=True, exist_ok=True)
        items = by_scene[scene_index]
        twin = items[0].twin
        (scene_dir / "twin.json").write_text(serialize_twin(twin), encoding="utf-8")
        with open(scene_dir / "queries.jsonl", "w", encoding="utf-8") as handle:
            for qi, item in enumerate(items):
                case = item.case
                gt_paths = []
                for t, mask in enumerate(case.gt_masks, start=1):
                    rel = f"gt/q{qi:03d}_f{t:03d}.png"
                    write_mask_png(mask, scene_dir / rel)
                    gt_paths.append(rel)
                line = {
                    "query_id": f"{scene_name}/q{qi:03d}",
                    "query": case.query,
                    "category": case.category,
                    "difficulty": case.difficulty,
                    "gt_ids": list(case.gt_ids),
                    "gt_masks": gt_paths,
                }
                handle.write(json.dumps(line, separators=(",", ":"), ensure_ascii=True) + "\n")
                n_cases += 1
    manifest = {"schema_version": "1.0", "seed": seed, "scenes": scene_names}
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, separators=(",", ":"), ensure_ascii=True), encoding="utf-8"
    )
    return n_cases


def load_cases_dir(cases_dir: Path) -> list[CaseBundle]:
    manifest_path = cases_dir / MANIFEST_NAME
    if not manifest_path.is_file():
        raise PipelineError(f"{cases_dir} has no {MANIFEST_NAME}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("schema_version") != "1.0":
        raise PipelineError(
            f"unsupported cases schema_version {manifest.get('schema_version')!r}"
        )
    bundles: list[CaseBundle] = []
    for scene_name in manifest["scenes"]:
        scene_dir = cases_dir / scene_name
        twin = parse_twin(
            (scene_dir / "twin.json").read_text(encoding="utf-8"), base_dir=scene_dir
        )
        for row in read_jsonl(scene_dir / "queries.jsonl"):
            gt_masks = tuple(read_mask_png(scene_dir / rel) for rel in row["gt_masks"])
            bundles.append(
                CaseBundle(
                    query_id=row["query_id"],
                    query=row["query"],
                    twin=twin,
                    gt_masks=gt_masks,
                    gt_ids=tuple(row.get("gt_ids", ())),
                    category=row.get("category", "semantic"),
                    difficulty=row.get("difficulty", "level1"),
                    twin_path=f"{scene_name}/twin.json",
                )
            )
    return bundles


def load_answer(path: Path) -> dict[str, Any]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or "instances" not in doc:
        raise PipelineError(f"{path} is not an answer file with an 'instances' list")
    return doc

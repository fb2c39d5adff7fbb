"""Qualitative overlay rendering.

One PNG per frame: correctly predicted pixels in green, false positives in
red, the ground-truth boundary as a yellow outline, and other twin instances
as a faint gray backdrop.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .metrics import boundary_pixels
from .rollout import AnswerBlock
from .rewards import resolve_answer_masks
from .twin import Mask, TwinSequence

BACKDROP = (70, 70, 70)
CORRECT = (0, 200, 0)
INCORRECT = (220, 30, 30)
GT_OUTLINE = (255, 220, 0)


def render_overlays(
    twin: TwinSequence,
    answer: AnswerBlock,
    out_dir: Path,
    gt_masks: Sequence[Mask] | None = None,
) -> list[Path]:
    dims = twin.dims
    if dims is None:
        raise ValueError("twin has no instances; nothing to render")
    width, height = dims
    pred_masks, issue = resolve_answer_masks(answer, twin)
    if pred_masks is None:
        raise ValueError(f"answer does not resolve against the twin: {issue}")
    if gt_masks is not None and len(gt_masks) != twin.n_frames:
        raise ValueError("ground truth must cover every frame")
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, frame in enumerate(twin.frames):
        canvas = np.zeros((height, width, 3), dtype=np.uint8)
        for record in frame.instances:
            canvas[record.mask.decode()] = BACKDROP
        pred = pred_masks[index].decode()
        if gt_masks is not None:
            gt = gt_masks[index].decode()
            canvas[pred & gt] = CORRECT
            canvas[pred & ~gt] = INCORRECT
            canvas[boundary_pixels(gt)] = GT_OUTLINE
        else:
            canvas[pred] = CORRECT
        path = out_dir / f"frame_{frame.t:04d}.png"
        Image.fromarray(canvas, mode="RGB").save(path, format="PNG")
        paths.append(path)
    return paths

"""Conformance tests: the primary artifact is the oracle.

The extractor itself never imports twinseg; these tests do, to verify the
emitted files against the twin schema and statistic definitions.
"""

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from twinseg_extract import ExtractionError, ExtractionJob, extract
from twinseg_extract.cli import main as cli_main

from twinseg.twin import DepthMap, compute_depth_stats, parse_twin

from cliputil import draw_clip


def run_twin_validate(twin_path: Path) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "twinseg", "twin", "validate", str(twin_path)],
        capture_output=True,
        text=True,
    )


def test_output_passes_primary_validator(clip_10, tmp_path):
    twin_path = extract(ExtractionJob(input_path=clip_10, out_dir=tmp_path / "out"))
    result = run_twin_validate(twin_path)
    assert result.returncode == 0, result.stderr
    assert result.stdout.startswith("ok:")


def test_depth_stats_match_primary_recompute(clip_10, tmp_path):
    out = tmp_path / "out"
    twin_path = extract(ExtractionJob(input_path=clip_10, out_dir=out))
    twin = parse_twin(twin_path.read_text())
    assert twin.n_frames == 10
    checked = 0
    for frame in twin.frames:
        depth_values = np.load(out / "depth" / f"frame_{frame.t:04d}.npy")
        depth = DepthMap(depth_values.shape[1], depth_values.shape[0], depth_values)
        for record in frame.instances:
            stats = compute_depth_stats(record.mask, depth)
            assert abs(stats.mean - record.depth_stats.mean) <= 1e-6
            assert abs(stats.variance - record.depth_stats.variance) <= 1e-6
            assert abs(stats.min - record.depth_stats.min) <= 1e-6
            assert abs(stats.max - record.depth_stats.max) <= 1e-6
            assert stats.pixel_count == record.depth_stats.pixel_count
            checked += 1
    assert checked >= 20  # two instances across ten frames


def test_single_image_yields_one_frame(single_image, tmp_path):
    twin_path = extract(ExtractionJob(input_path=single_image, out_dir=tmp_path / "out"))
    twin = parse_twin(twin_path.read_text())
    assert twin.n_frames == 1
    assert twin.frames[0].t == 1
    assert run_twin_validate(twin_path).returncode == 0


def test_stride_reindexes_frames(tmp_path):
    clip = draw_clip(tmp_path / "clip100", 100)
    twin_path = extract(ExtractionJob(input_path=clip, out_dir=tmp_path / "out", stride=5))
    twin = parse_twin(twin_path.read_text())
    assert twin.n_frames == 20
    assert [f.t for f in twin.frames] == list(range(1, 21))


def test_track_ids_stable_across_frames(clip_10, tmp_path):
    twin_path = extract(ExtractionJob(input_path=clip_10, out_dir=tmp_path / "out"))
    twin = parse_twin(twin_path.read_text())
    ids_per_frame = [tuple(r.id for r in frame.instances) for frame in twin.frames]
    assert all(ids == ids_per_frame[0] for ids in ids_per_frame)
    assert len(ids_per_frame[0]) == 2
    # the mover's bbox actually moves while keeping its id
    mover_id = next(
        r.id for r in twin.frames[0].instances if r.semantic_label.startswith("red")
    )
    first = twin.frames[0].instance(mover_id).bbox
    last = twin.frames[-1].instance(mover_id).bbox
    assert last[0] > first[0]


def test_labels_and_confidence_come_from_detector(clip_10, tmp_path):
    twin_path = extract(ExtractionJob(input_path=clip_10, out_dir=tmp_path / "out"))
    twin = parse_twin(twin_path.read_text())
    labels = {r.semantic_label for r in twin.frames[0].instances}
    assert labels == {"red object", "blue object"}
    assert all(0.0 <= r.confidence <= 1.0 for r in twin.frames[0].instances)
    assert all(r.confidence > 0.5 for r in twin.frames[0].instances)


def test_blank_clip_emits_valid_empty_frames(tmp_path):
    blank = tmp_path / "blank"
    blank.mkdir()
    from PIL import Image

    for t in range(3):
        Image.new("RGB", (32, 32)).save(blank / f"frame_{t}.png")
    twin_path = extract(ExtractionJob(input_path=blank, out_dir=tmp_path / "out"))
    twin = parse_twin(twin_path.read_text())
    assert twin.n_frames == 3
    assert all(not frame.instances for frame in twin.frames)
    assert run_twin_validate(twin_path).returncode == 0


def test_job_validation():
    with pytest.raises(ExtractionError, match="stride"):
        ExtractionJob(input_path=Path("x"), out_dir=Path("y"), stride=0)
    with pytest.raises(ExtractionError, match="unknown segmenter"):
        ExtractionJob(input_path=Path("x"), out_dir=Path("y"), segmenter="sam-xxl")


def test_cli_round_trip(clip_10, tmp_path, capsys):
    code = cli_main(["--input", str(clip_10), "--out", str(tmp_path / "out"), "--stride", "2"])
    assert code == 0
    twin = parse_twin((tmp_path / "out" / "twin.json").read_text())
    assert twin.n_frames == 5
    missing = cli_main(["--input", str(tmp_path / "nope"), "--out", str(tmp_path / "o2")])
    assert missing == 1

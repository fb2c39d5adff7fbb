"""Shared pytest fixtures; the brute-force oracles live in oracles.py."""

from __future__ import annotations

import random

import pytest

from twinseg.twin import TwinFrame, TwinSequence

from oracles import instance_from_raster, square_raster


@pytest.fixture
def small_twin() -> TwinSequence:
    """Two disjoint squares over two frames, distinct depths and labels."""
    frames = []
    for t in (1, 2):
        a = instance_from_raster(1, square_raster(16, 1, 1, 4), depth=2.0, label="red rectangle")
        b = instance_from_raster(2, square_raster(16, 9, 9, 5), depth=7.0, label="blue disc")
        frames.append(TwinFrame(t=t, instances=(a, b)))
    return TwinSequence(frames=tuple(frames), source={"video_id": "fixture", "extractor": "test"})


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240809)

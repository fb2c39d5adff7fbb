from __future__ import annotations

from pathlib import Path

import pytest

from cliputil import draw_clip


@pytest.fixture
def clip_10(tmp_path) -> Path:
    return draw_clip(tmp_path / "clip", 10)


@pytest.fixture
def single_image(tmp_path) -> Path:
    draw_clip(tmp_path / "img", 1)
    return tmp_path / "img" / "frame_0000.png"

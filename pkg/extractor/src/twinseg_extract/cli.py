"""Thin CLI: twinseg-extract --input <media> --out <dir> [--stride N]."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .extract import ExtractionError, ExtractionJob, extract


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="twinseg-extract",
        description="Build a twin JSON scene record from an image, frame directory, or video.",
    )
    parser.add_argument("--input", type=Path, required=True, help="image, frame directory, or video")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--stride", type=int, default=1, help="keep every Nth frame")
    parser.add_argument("--segmenter", default="threshold-cc", help="segmentation backend")
    parser.add_argument("--depth", default="intensity", help="depth estimation backend")
    parser.add_argument("--detector", default="colorname", help="detection backend")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        job = ExtractionJob(
            input_path=args.input,
            out_dir=args.out,
            stride=args.stride,
            segmenter=args.segmenter,
            depth_estimator=args.depth,
            detector=args.detector,
        )
        twin_path = extract(job)
    except ExtractionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {twin_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

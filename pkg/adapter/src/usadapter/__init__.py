"""External segmenter adapter: answer an ROI batch with mask files.

This is the reference implementation of the model side of the exchange
protocol. The pipeline exports ``<in_dir>/manifest.json`` plus
``<in_dir>/rois/*.png``; this tool answers every manifest entry with
``<out_dir>/masks/<image_id>_<k>.png`` (8-bit gray, 255 = lesion), and the
pipeline pastes those masks back into full-frame instances.

The segmentation rule here is deliberately model-free -- mark every pixel
whose normalized intensity is at or below a threshold, since ultrasound
lesions are hypoechoic (darker than surrounding tissue). To serve a trained
model instead, replace :func:`predict_mask` with an inference call on the ROI
array and keep everything else: the manifest walk, the file naming, and the
size contract (mask size == ROI size) are the whole protocol.

Usage: adapter <in_dir> <out_dir> [--t 0.5]

Exit codes mirror the pipeline CLI: 0 success, 1 bad arguments, 2 unusable
input data (missing manifest or ROI files; partial output is left in place).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

__version__ = "0.1.0"


def predict_mask(roi: np.ndarray, threshold: float) -> np.ndarray:
    """Darker-side rule: 255 where intensity/255 <= threshold, else 0.

    A trained model would replace this function: take the (h, w) uint8 ROI,
    return an (h, w) uint8 mask with 255 marking lesion pixels.
    """
    return np.where(roi / 255.0 <= threshold, 255, 0).astype(np.uint8)


def run(in_dir: Path, out_dir: Path, threshold: float) -> tuple[int, int]:
    """Process every manifest entry; returns (written, failed) counts."""
    manifest_path = in_dir / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest.json in {in_dir}")
    entries = json.loads(manifest_path.read_text())
    if not isinstance(entries, list):
        raise ValueError("manifest.json must hold a JSON array")

    masks_dir = out_dir / "masks"
    masks_dir.mkdir(parents=True, exist_ok=True)
    written = failed = 0
    for entry in entries:
        roi_path = in_dir / entry["roi"]
        if not roi_path.is_file():
            print(f"adapter: missing roi {entry['roi']}", file=sys.stderr)
            failed += 1
            continue
        with Image.open(roi_path) as im:
            roi = np.asarray(im.convert("L"))
        mask = predict_mask(roi, threshold)
        Image.fromarray(mask).save(masks_dir / f"{entry['image_id']}_{entry['k']}.png")
        written += 1
    return written, failed


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="adapter", description="answer an ROI batch with threshold masks")
    parser.add_argument("in_dir", type=Path, help="directory holding manifest.json and rois/")
    parser.add_argument("out_dir", type=Path, help="directory to receive masks/")
    parser.add_argument("--t", type=float, default=0.5, help="normalized intensity threshold (default 0.5)")
    try:
        args = parser.parse_args(argv)
    except SystemExit:
        return 1
    if not 0.0 <= args.t <= 1.0:
        print(f"adapter: threshold must lie in [0, 1], got {args.t}", file=sys.stderr)
        return 1
    try:
        written, failed = run(args.in_dir, args.out_dir, args.t)
    except (FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        print(f"adapter: {exc}", file=sys.stderr)
        return 2
    print(f"adapter: wrote {written} masks ({failed} entries failed)")
    return 2 if failed else 0


if __name__ == "__main__":
    sys.exit(main())

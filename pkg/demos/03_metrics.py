"""Segmentation and detection metrics: Dice loss, RMSE, matching, AP.

Run: python demos/03_metrics.py
"""
import numpy as np

from ultraseg import (
    BinaryMask,
    BoundingBox,
    Detection,
    ProbMask,
    average_precision,
    dice_coefficient,
    dice_loss,
    match_detections,
    mean_average_precision,
    pixel_rmse,
)

# The training loss is the factor-2-free Dice form: a perfect binary match
# scores -0.5, not -1. dice_coefficient keeps the standard definition, and
# for binary predictions the two are tied by coefficient == -2 * loss.
g = BinaryMask(np.array([[1, 1], [1, 1]], dtype=np.uint8))
p_perfect = ProbMask(np.ones((2, 2)))
p_half = ProbMask(np.full((2, 2), 0.5))
print(f"dice_loss(perfect)   = {dice_loss(p_perfect, g):.6f}")
print(f"dice_loss(all 0.5)   = {dice_loss(p_half, g):.6f}")
print(f"dice_coefficient     = {dice_coefficient(g, g):.6f}")

# Per-image RMSE; dataset-level numbers are unweighted means of these.
print(f"rmse(all 0.5 vs GT)  = {pixel_rmse(p_half, g):.6f}")

# Greedy VOC-style matching feeds all-point-interpolated average precision.
gts = [(BoundingBox(10, 10, 20, 20), "benign"), (BoundingBox(50, 50, 20, 20), "benign")]
preds = [
    Detection(box=BoundingBox(10, 10, 20, 20), label="benign", score=0.95),  # hit
    Detection(box=BoundingBox(11, 11, 20, 20), label="benign", score=0.80),  # duplicate -> FP
    Detection(box=BoundingBox(49, 52, 20, 20), label="benign", score=0.70),  # hit
]
flags = match_detections(preds, gts, iou_thresh=0.5)
print(f"\nTP flags: {flags}")
ap = average_precision(flags, [p.score for p in preds], n_gt=len(gts))
print(f"AP@0.5 = {ap:.6f}")

# mAP averages per-class AP over classes that actually have ground truth.
per_class = {
    "benign": (flags, [p.score for p in preds], 2),
    "malignant": ([True], [0.9], 1),
}
print(f"mAP = {mean_average_precision(per_class):.6f}")

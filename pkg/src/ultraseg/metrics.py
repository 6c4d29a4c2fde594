"""Overlap metrics, detection matching, average precision, and report assembly.

The segmentation loss here is deliberately the factor-2-free form

    loss = -sum(p*g) / (sum(p^2) + sum(g^2) + eps)

so a perfect binary match scores -0.5, not -1. ``dice_coefficient`` carries
the standard 2|a&b|/(|a|+|b|) definition for comparison with other work; for
binary predictions the two are linked by coefficient == -2 * loss.

Aggregation conventions:

* dataset RMSE/Dice = unweighted mean of per-image values, so small lesions
  are not drowned by large images;
* mAP = AP@IoU0.5 with all-point interpolation, averaged over classes that
  have at least one ground-truth instance;
* an image with neither ground truth nor predictions scores perfectly
  (dice 1.0, rmse 0.0) -- normal scans must not penalize a silent pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import json

import numpy as np

from .geometry import iou
from .imaging import BinaryMask, ProbMask

DICE_SMOOTH_EPS = 1e-7


def _check_same_size(a, b) -> None:
    if a.size != b.size:
        raise ValueError(f"shape mismatch: {a.size} vs {b.size}")


def dice_loss(pred: ProbMask, truth: BinaryMask) -> float:
    """Factor-2-free Dice loss of a probability mask against binary truth.

    Ranges over (-0.5, 0] for probabilistic predictions; both-empty inputs
    give 0.0 via the epsilon-smoothed denominator.
    """
    _check_same_size(pred, truth)
    p = pred.pixels.ravel()
    g = truth.pixels.ravel().astype(np.float64)
    num = float(p @ g)
    den = float(p @ p) + float(g @ g) + DICE_SMOOTH_EPS
    return -num / den


def dice_coefficient(a: BinaryMask, b: BinaryMask) -> float:
    """Standard Dice overlap 2|a&b|/(|a|+|b|); 1.0 when both masks are empty."""
    _check_same_size(a, b)
    inter = int((a.pixels & b.pixels).sum())
    total = a.count() + b.count()
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def pixel_rmse(pred: ProbMask, truth: BinaryMask) -> float:
    """Per-image root mean squared error between probabilities and truth bits."""
    _check_same_size(pred, truth)
    diff = pred.pixels - truth.pixels.astype(np.float64)
    return float(np.sqrt(np.mean(diff * diff)))


def match_detections(preds, gts, iou_thresh: float = 0.5) -> list[bool]:
    """Greedy VOC-style matching; returns one TP/FP flag per prediction.

    Predictions are visited in descending score order (ties keep input
    order); each one claims the highest-IoU still-unmatched ground truth of
    its own class with IoU >= iou_thresh. Duplicates on an already claimed
    ground truth are false positives. `preds` are objects with box/label/
    score attributes; `gts` are (BoundingBox, label) pairs. Flags come back
    aligned with the input order of `preds`.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    claimed = [False] * len(gts)
    flags = [False] * len(preds)
    for i in order:
        det = preds[i]
        best_j = -1
        best_iou = 0.0
        for j, (gt_box, gt_label) in enumerate(gts):
            if claimed[j] or gt_label != det.label:
                continue
            v = iou(det.box, gt_box)
            if v >= iou_thresh and v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0:
            claimed[best_j] = True
            flags[i] = True
    return flags


def average_precision(tp_flags, scores, n_gt: int) -> float:
    """All-point interpolated area under the precision-recall curve.

    PR points are emitted per distinct score threshold (tied scores form one
    operating point, matching what a real confidence cutoff can express), the
    precision envelope is made monotone non-increasing, and the staircase is
    integrated over recall. Returns 0.0 whenever n_gt == 0.
    """
    if len(tp_flags) != len(scores):
        raise ValueError("tp_flags and scores must have equal length")
    if n_gt < 0:
        raise ValueError(f"n_gt must be >= 0, got {n_gt}")
    if n_gt == 0 or not len(scores):
        return 0.0
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    points: list[tuple[float, float]] = []
    tp = fp = 0
    for pos, i in enumerate(order):
        if tp_flags[i]:
            tp += 1
        else:
            fp += 1
        last_of_group = pos + 1 == len(order) or scores[order[pos + 1]] != scores[i]
        if last_of_group:
            points.append((tp / n_gt, tp / (tp + fp)))
    envelope = [0.0] * len(points)
    best = 0.0
    for j in range(len(points) - 1, -1, -1):
        best = max(best, points[j][1])
        envelope[j] = best
    ap = 0.0
    prev_recall = 0.0
    for j, (recall, _) in enumerate(points):
        ap += (recall - prev_recall) * envelope[j]
        prev_recall = recall
    return ap


def mean_average_precision(per_class) -> float:
    """Unweighted mean AP over classes with at least one ground truth.

    `per_class` maps class name -> (tp_flags, scores, n_gt). Classes with
    n_gt == 0 are excluded; an empty mapping (or all-empty classes) gives 0.0.
    """
    aps = [average_precision(flags, scores, n_gt)
           for flags, scores, n_gt in per_class.values() if n_gt > 0]
    if not aps:
        return 0.0
    return sum(aps) / len(aps)


# --- dataset-level evaluation ---------------------------------------------------


@dataclass(frozen=True)
class EvalRow:
    image_id: str
    label: str
    rmse: float
    dice: float
    matched: bool


@dataclass(frozen=True)
class EvalReport:
    per_class_rmse: dict[str, float]
    per_class_dice: dict[str, float]
    map_50: float
    rows: tuple[EvalRow, ...]

    def to_json_dict(self) -> dict:
        return {
            "per_class_rmse": {k: round(v, 6) for k, v in sorted(self.per_class_rmse.items())},
            "per_class_dice": {k: round(v, 6) for k, v in sorted(self.per_class_dice.items())},
            "map_50": round(self.map_50, 6),
            "per_image": [
                {
                    "id": r.image_id,
                    "class": r.label,
                    "rmse": round(r.rmse, 6),
                    "dice": round(r.dice, 6),
                    "matched": r.matched,
                }
                for r in self.rows
            ],
        }

    def to_csv_text(self) -> str:
        lines = ["id,class,rmse,dice,matched"]
        for r in self.rows:
            lines.append(f"{r.image_id},{r.label},{r.rmse:.6f},{r.dice:.6f},{int(r.matched)}")
        return "\n".join(lines) + "\n"


def write_report_json(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")


def write_report_csv(report: EvalReport, path) -> None:
    Path(path).write_text(report.to_csv_text())


def _union_mask(size, masks) -> BinaryMask:
    width, height = size
    if not masks:
        return BinaryMask.zeros(width, height)
    acc = np.zeros((height, width), dtype=np.uint8)
    for m in masks:
        acc |= m.pixels
    return BinaryMask(acc)


def evaluate_predictions(records, predictions, iou_thresh: float = 0.5) -> EvalReport:
    """Score predicted instances against ground truth, image by image.

    `predictions` maps record id -> sequence of predicted instances (objects
    with mask/label/score/box, e.g. the pipeline's Instance). Ground-truth
    boxes for detection matching are the dataset's expanded boxes -- the same
    boxes a detector trained on this dataset predicts. The per-image
    ``matched`` flag is true when every ground-truth instance was claimed and
    no prediction was left over.
    """
    rows = []
    pooled: dict[str, list[tuple[float, bool]]] = {}
    n_gt_by_class: dict[str, int] = {}
    per_label_rmse: dict[str, list[float]] = {}
    per_label_dice: dict[str, list[float]] = {}
    any_prediction = False

    for rec in records:
        preds = list(predictions.get(rec.id, ()))
        any_prediction = any_prediction or bool(preds)
        gt_union = _union_mask(rec.image.size, [inst.mask for inst in rec.instances])
        pred_union = _union_mask(rec.image.size, [p.mask for p in preds])
        row_dice = dice_coefficient(pred_union, gt_union)
        row_rmse = pixel_rmse(pred_union.as_prob(), gt_union)

        gts = [(inst.expanded_box, inst.label) for inst in rec.instances]
        flags = match_detections(preds, gts, iou_thresh)
        matched = all(flags) and sum(flags) == len(gts)

        for inst in rec.instances:
            n_gt_by_class[inst.label] = n_gt_by_class.get(inst.label, 0) + 1
        for p, flag in zip(preds, flags):
            pooled.setdefault(p.label, []).append((p.score, flag))

        rows.append(EvalRow(image_id=rec.id, label=rec.label, rmse=row_rmse, dice=row_dice, matched=matched))
        per_label_rmse.setdefault(rec.label, []).append(row_rmse)
        per_label_dice.setdefault(rec.label, []).append(row_dice)

    per_class = {}
    for label, n_gt in n_gt_by_class.items():
        entries = pooled.get(label, [])
        per_class[label] = ([f for _, f in entries], [s for s, _ in entries], n_gt)
    if n_gt_by_class:
        map_50 = mean_average_precision(per_class)
    else:
        # nothing to detect anywhere: a silent pipeline is perfect, noise is not
        map_50 = 0.0 if any_prediction else 1.0

    return EvalReport(
        per_class_rmse={k: sum(v) / len(v) for k, v in per_label_rmse.items()},
        per_class_dice={k: sum(v) / len(v) for k, v in per_label_dice.items()},
        map_50=map_50,
        rows=tuple(rows),
    )

"""Detections, non-maximum suppression, and the detector backend seam.

Real trained detectors stay outside this package; they plug in either as
objects satisfying :class:`DetectorBackend` or as JSON-lines detection files
(one ``{"image_id", "box", "label", "score"}`` object per line). The oracle
detector reads ground truth and exists so the whole pipeline can be verified
end to end.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

from .dataset import NORMAL, DatasetRecord
from .geometry import BoundingBox, iou
from .imaging import Image

DEFAULT_CONF_THRESH = 0.6
DEFAULT_NMS_IOU = 0.4


@dataclass(frozen=True)
class Detection:
    """One detected lesion: box, abnormality class, and confidence score."""

    box: BoundingBox
    label: str
    score: float

    def __post_init__(self):
        if self.label == NORMAL:
            raise ValueError("detections are lesions; 'normal' is not a detectable class")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@runtime_checkable
class DetectorBackend(Protocol):
    """Anything that can look at a scan and propose lesion detections.

    ``input_size`` advertises the resolution the backend expects (None when
    it does not care); ``concurrent_safe`` declares whether detect() may be
    called from several threads at once.
    """

    name: str
    input_size: tuple[int, int] | None
    concurrent_safe: bool

    def detect(self, image: Image) -> list[Detection]: ...


def _nms_sort_key(det: Detection):
    return (-det.score, det.box.x, det.box.y)


def nms(dets, conf_thresh: float = DEFAULT_CONF_THRESH, iou_thresh: float = DEFAULT_NMS_IOU) -> list[Detection]:
    """Greedy class-agnostic non-maximum suppression.

    Detections scoring below `conf_thresh` are dropped; the rest are visited
    best-first and any candidate overlapping an already kept detection with
    IoU strictly above `iou_thresh` is suppressed, whatever its class -- one
    physical lesion has one abnormality class, so contradictory overlaps lose
    to the higher confidence. Ties break on (score desc, x asc, y asc); the
    result is sorted by descending score.
    """
    kept: list[Detection] = []
    for det in sorted((d for d in dets if d.score >= conf_thresh), key=_nms_sort_key):
        if all(iou(det.box, k.box) <= iou_thresh for k in kept):
            kept.append(det)
    return kept


def oracle_detect(record: DatasetRecord, score: float = 1.0) -> list[Detection]:
    """Ground-truth-reading detections: one per instance, on the expanded box."""
    return [Detection(box=inst.expanded_box, label=inst.label, score=score) for inst in record.instances]


@dataclass
class OracleDetector:
    """DetectorBackend wrapper around one record's ground truth."""

    record: DatasetRecord
    score: float = 1.0
    name: str = "oracle"
    input_size: tuple[int, int] | None = None
    concurrent_safe: bool = True

    def detect(self, image: Image) -> list[Detection]:
        return oracle_detect(self.record, self.score)


@dataclass
class StaticDetector:
    """DetectorBackend that replays a fixed list (e.g. loaded from JSONL)."""

    detections: list[Detection] = field(default_factory=list)
    name: str = "static"
    input_size: tuple[int, int] | None = None
    concurrent_safe: bool = True

    def detect(self, image: Image) -> list[Detection]:
        return list(self.detections)


def write_detections_jsonl(items, path) -> None:
    """Serialize (image_id, Detection) pairs, one JSON object per line."""
    with open(path, "w") as fh:
        for image_id, det in items:
            fh.write(json.dumps({
                "image_id": image_id,
                "box": det.box.to_dict(),
                "label": det.label,
                "score": det.score,
            }, sort_keys=True) + "\n")


def read_detections_jsonl(path) -> dict[str, list[Detection]]:
    """Load detections grouped by image id, preserving file order."""
    grouped: dict[str, list[Detection]] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            det = Detection(
                box=BoundingBox.from_dict(obj["box"]),
                label=str(obj["label"]),
                score=float(obj["score"]),
            )
            grouped.setdefault(str(obj["image_id"]), []).append(det)
    return grouped

"""The composed instance segmenter: detect, suppress, crop, segment, paste back.

For every post-NMS detection the pipeline expands the box by the same pixel
offset used when the dataset crops were built, crops the ROI, hands it to the
segmenter registered for the detected class, resizes the predicted
probabilities back onto the box, pastes them into a zero canvas, and
binarizes. Nothing can be predicted outside the detection box -- that
restriction is the box-refinement step, and it holds for every emitted
instance.

Trained models integrate in two ways: in process as
:class:`SegmenterBackend` objects, or out of process through the file
exchange protocol (``rois/*.png`` + ``manifest.json`` out, ``masks/*.png``
back in), which :func:`write_roi_batch` and :func:`read_mask_batch`
implement. A failing ROI never voids the rest of the scan; failures are
reported per detection.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
from PIL import Image as PILImage

from .dataset import DatasetRecord, NORMAL
from .detection import Detection, DetectorBackend, nms
from .errors import BackendError
from .geometry import BoundingBox, Size, expand_box
from .imaging import (
    BinaryMask,
    Image,
    ProbMask,
    RESIZE_METHODS,
    crop,
    paste,
    read_binary_mask_png,
    resize,
    threshold,
    write_image_png,
    write_binary_mask_png,
)

DEFAULT_ROI_SIZE = (256, 256)


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the composed segmenter; defaults mirror the dataset recipe.

    ``roi_size=None`` skips ROI resizing entirely (the segmenter sees the
    box-sized crop), which makes the oracle path exact and is the natural
    setting for segmenters that accept variable input sizes.
    """

    offset_px: int = 10
    conf_thresh: float = 0.6
    nms_iou: float = 0.4
    roi_size: tuple[int, int] | None = DEFAULT_ROI_SIZE
    mask_binarize_thresh: float = 0.5
    resize_method: str = "bicubic"
    seed: int = 0

    def __post_init__(self):
        if self.offset_px < 0 or self.offset_px % 2 != 0:
            raise ValueError(f"offset_px must be even and >= 0, got {self.offset_px}")
        for name in ("conf_thresh", "nms_iou", "mask_binarize_thresh"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.roi_size is not None:
            w, h = self.roi_size
            if w < 1 or h < 1:
                raise ValueError(f"roi_size must be at least 1x1, got {self.roi_size}")
            object.__setattr__(self, "roi_size", (int(w), int(h)))
        if self.resize_method not in RESIZE_METHODS:
            raise ValueError(f"resize_method must be one of {RESIZE_METHODS}, got {self.resize_method!r}")


@dataclass(frozen=True)
class SegmentContext:
    """Where an ROI came from; mirrors the exchange-protocol manifest entry."""

    box: BoundingBox
    image_id: str | None = None


@runtime_checkable
class SegmenterBackend(Protocol):
    """Per-class semantic segmenter: ROI image in, same-size probabilities out.

    ``label`` names the class the backend serves; real models may ignore
    `ctx`, which only exists so ground-truth-reading test backends know where
    the crop came from (the same fields every manifest entry carries).
    """

    label: str
    input_size: tuple[int, int] | None
    concurrent_safe: bool

    def segment(self, roi: Image, ctx: SegmentContext) -> ProbMask: ...


@dataclass(frozen=True, eq=False)
class Instance:
    """Final pipeline output: a full-image mask confined to its detection box."""

    mask: BinaryMask
    label: str
    score: float
    box: BoundingBox

    def __post_init__(self):
        if self.label == NORMAL:
            raise ValueError("instances are lesions; 'normal' is not an instance class")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        ys, xs = np.nonzero(self.mask.pixels)
        if xs.size and (
            xs.min() < self.box.x or xs.max() >= self.box.x2
            or ys.min() < self.box.y or ys.max() >= self.box.y2
        ):
            raise ValueError("instance mask has set pixels outside its box")


@dataclass(frozen=True)
class RoiFailure:
    image_id: str | None
    detection: Detection | None
    message: str


@dataclass
class RunResult:
    instances: list[Instance]
    errors: list[RoiFailure] = field(default_factory=list)


def _restrict_to_box(bits: BinaryMask, box: BoundingBox) -> BinaryMask:
    inside = np.zeros_like(bits.pixels)
    inside[box.y : box.y2, box.x : box.x2] = 1
    return BinaryMask(bits.pixels & inside)


def assemble_instance(image_size: Size, roi_box: BoundingBox, label: str, score: float,
                      prob: ProbMask, cfg: PipelineConfig) -> Instance | None:
    """Paste ROI probabilities back into the full frame and binarize.

    Resize back to the box first, threshold second -- thresholding a small
    mask and then resizing would alias away thin spiculations. Returns None
    when the binarized mask is empty.
    """
    if prob.size != roi_box.size:
        prob = resize(prob, roi_box.size, cfg.resize_method)
    canvas = ProbMask.zeros(*image_size)
    full = paste(canvas, prob, roi_box)
    bits = _restrict_to_box(threshold(full, cfg.mask_binarize_thresh), roi_box)
    if not bits.pixels.any():
        return None
    return Instance(mask=bits, label=label, score=score, box=roi_box)


def _segment_one(image: Image, det: Detection, segmenter: SegmenterBackend,
                 cfg: PipelineConfig, image_id: str | None) -> Instance | None:
    roi_box = expand_box(det.box, cfg.offset_px, image.size)
    roi = crop(image, roi_box)
    seg_in = roi if cfg.roi_size is None else resize(roi, cfg.roi_size, cfg.resize_method)
    prob = segmenter.segment(seg_in, SegmentContext(box=roi_box, image_id=image_id))
    if not isinstance(prob, ProbMask):
        raise BackendError(f"segmenter {getattr(segmenter, 'label', '?')!r} returned {type(prob).__name__}, not ProbMask")
    if prob.size != seg_in.size:
        raise BackendError(f"segmenter output size {prob.size} != roi size {seg_in.size}")
    return assemble_instance(image.size, roi_box, det.label, det.score, prob, cfg)


def run_image(image: Image, detector: DetectorBackend, segmenters: Mapping[str, SegmenterBackend],
              cfg: PipelineConfig = PipelineConfig(), image_id: str | None = None,
              jobs: int = 1) -> RunResult:
    """Run the full detect-suppress-crop-segment-paste pipeline on one scan.

    Each detection is processed independently; a missing segmenter for a
    detected class or a backend failure is recorded as a :class:`RoiFailure`
    and the remaining detections proceed. Instances come back sorted by
    (score desc, box.x, box.y) regardless of `jobs`, so parallel runs are
    bit-identical to serial ones.
    """
    try:
        raw = detector.detect(image)
    except Exception as exc:
        return RunResult(instances=[], errors=[RoiFailure(image_id, None, f"detector failed: {exc}")])
    dets = nms(raw, cfg.conf_thresh, cfg.nms_iou)

    def process(det: Detection) -> tuple[Instance | None, RoiFailure | None]:
        segmenter = segmenters.get(det.label)
        if segmenter is None:
            return None, RoiFailure(image_id, det, f"no segmenter for class {det.label!r}")
        try:
            return _segment_one(image, det, segmenter, cfg, image_id), None
        except Exception as exc:
            return None, RoiFailure(image_id, det, str(exc))

    if jobs > 1 and len(dets) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(process, dets))
    else:
        outcomes = [process(det) for det in dets]

    instances = [inst for inst, _ in outcomes if inst is not None]
    errors = [err for _, err in outcomes if err is not None]
    instances.sort(key=lambda i: (-i.score, i.box.x, i.box.y))
    return RunResult(instances=instances, errors=errors)


# --- reference segmenters -------------------------------------------------------


def otsu_threshold(values: np.ndarray) -> int | None:
    """Threshold in 0..254 maximizing between-class variance; None if degenerate.

    Splits intensities into v <= t and v > t; ties resolve to the smallest t
    so results are deterministic.
    """
    hist = np.bincount(np.asarray(values, dtype=np.uint8).ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    if total == 0:
        return None
    w0 = np.cumsum(hist)[:-1]
    w1 = total - w0
    cum_mean = np.cumsum(hist * np.arange(256))[:-1]
    grand = float(np.sum(hist * np.arange(256)))
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return None
    mu0 = np.where(valid, cum_mean / np.where(w0 > 0, w0, 1.0), 0.0)
    mu1 = np.where(valid, (grand - cum_mean) / np.where(w1 > 0, w1, 1.0), 0.0)
    between = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -1.0)
    return int(np.argmax(between))


@dataclass
class OtsuSegmenter:
    """Global Otsu threshold over the ROI; selects the darker side by default.

    Ultrasound lesions are hypoechoic, so on a two-level ROI the darker side
    is the lesion. A constant ROI has no split and yields an empty mask.
    """

    label: str = ""
    select_darker: bool = True
    name: str = "otsu"
    input_size: tuple[int, int] | None = None
    concurrent_safe: bool = True

    def segment(self, roi: Image, ctx: SegmentContext) -> ProbMask:
        t = otsu_threshold(roi.pixels)
        if t is None:
            return ProbMask.zeros(*roi.size)
        if self.select_darker:
            bits = roi.pixels <= t
        else:
            bits = roi.pixels > t
        return ProbMask(bits.astype(np.float64))


@dataclass
class FixedThresholdSegmenter:
    """Marks pixels whose normalized intensity v/255 is >= t."""

    t: float
    label: str = ""
    name: str = "fixed"
    input_size: tuple[int, int] | None = None
    concurrent_safe: bool = True

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.t}")

    def segment(self, roi: Image, ctx: SegmentContext) -> ProbMask:
        return ProbMask((roi.pixels / 255.0 >= self.t).astype(np.float64))


@dataclass
class OracleSegmenter:
    """Ground-truth-reading segmenter: returns the GT mask cropped at the ROI."""

    record: DatasetRecord
    label: str
    name: str = "oracle"
    input_size: tuple[int, int] | None = None
    concurrent_safe: bool = True

    def segment(self, roi: Image, ctx: SegmentContext) -> ProbMask:
        if ctx is None or ctx.box is None:
            raise BackendError("oracle segmenter needs the roi context to locate the crop")
        union = np.zeros((self.record.image.height, self.record.image.width), dtype=np.uint8)
        for inst in self.record.instances:
            if inst.label == self.label:
                union |= inst.mask.pixels
        prob = crop(BinaryMask(union), ctx.box).as_prob()
        if prob.size != roi.size:  # the pipeline resized the crop before calling us
            prob = resize(prob, roi.size, "bilinear")
        return prob


def reference_segmenter(kind: str, label: str = "", record: DatasetRecord | None = None):
    """Build a reference backend from its CLI spelling: otsu | fixed:<t> | oracle."""
    if kind == "otsu":
        return OtsuSegmenter(label=label)
    if kind.startswith("fixed:"):
        return FixedThresholdSegmenter(t=float(kind.split(":", 1)[1]), label=label)
    if kind == "fixed":
        return FixedThresholdSegmenter(t=0.5, label=label)
    if kind == "oracle":
        if record is None:
            raise ValueError("oracle segmenter needs the ground-truth record")
        return OracleSegmenter(record=record, label=label)
    raise ValueError(f"unknown segmenter kind {kind!r}")


# --- file exchange protocol ------------------------------------------------------


def write_roi_batch(items, out_dir, cfg: PipelineConfig = PipelineConfig()) -> list[dict]:
    """Write ROI crops and the manifest that an external segmenter consumes.

    `items` yields (image_id, Image, post-NMS detections). Every detection
    becomes ``rois/<image_id>_<k>.png`` (8-bit gray, resized to cfg.roi_size
    unless that is None) plus one manifest entry carrying the expanded,
    clipped box the mask will be pasted back into. Returns the manifest,
    which is also written to ``manifest.json``.
    """
    out_dir = Path(out_dir)
    (out_dir / "rois").mkdir(parents=True, exist_ok=True)
    manifest: list[dict] = []
    for image_id, image, dets in items:
        for k, det in enumerate(dets):
            roi_box = expand_box(det.box, cfg.offset_px, image.size)
            roi = crop(image, roi_box)
            if cfg.roi_size is not None:
                roi = resize(roi, cfg.roi_size, cfg.resize_method)
            rel = f"rois/{image_id}_{k}.png"
            write_image_png(roi, out_dir / rel)
            manifest.append({
                "roi": rel,
                "image_id": image_id,
                "k": k,
                "label": det.label,
                "box": roi_box.to_dict(),
                "score": det.score,
            })
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


@dataclass(frozen=True)
class BatchIssue:
    entry_index: int
    message: str


def read_mask_batch(in_dir, manifest: list[dict] | None = None) -> tuple[list[tuple[dict, ProbMask]], list[BatchIssue]]:
    """Load the masks an external segmenter wrote for a ROI batch.

    Expects ``masks/<image_id>_<k>.png`` (8-bit gray, prob = v/255) next to
    the ``rois/`` directory, one per manifest entry and of identical size to
    its ROI. Per-entry problems (missing or wrong-size files) are collected
    and the rest of the batch still loads; a missing or malformed manifest is
    a batch-level :class:`BackendError`.
    """
    in_dir = Path(in_dir)
    if manifest is None:
        manifest_path = in_dir / "manifest.json"
        if not manifest_path.is_file():
            raise BackendError(f"no manifest.json in {in_dir}")
        try:
            manifest = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as exc:
            raise BackendError(f"malformed manifest.json: {exc}") from exc
    if not isinstance(manifest, list):
        raise BackendError("manifest must be a JSON array of entries")

    loaded: list[tuple[dict, ProbMask]] = []
    issues: list[BatchIssue] = []
    for idx, entry in enumerate(manifest):
        try:
            image_id, k = entry["image_id"], entry["k"]
            roi_rel = entry["roi"]
        except (TypeError, KeyError) as exc:
            raise BackendError(f"manifest entry {idx} is missing field {exc}") from exc
        mask_path = in_dir / "masks" / f"{image_id}_{k}.png"
        if not mask_path.is_file():
            issues.append(BatchIssue(idx, f"missing mask file {mask_path.name}"))
            continue
        roi_path = in_dir / roi_rel
        try:
            with PILImage.open(mask_path) as im:
                mask_arr = np.asarray(im.convert("L"), dtype=np.float64)
        except Exception as exc:
            issues.append(BatchIssue(idx, f"unreadable mask {mask_path.name}: {exc}"))
            continue
        if roi_path.is_file():
            with PILImage.open(roi_path) as roi_im:
                expected = roi_im.size
            if (mask_arr.shape[1], mask_arr.shape[0]) != expected:
                issues.append(BatchIssue(
                    idx, f"mask {mask_path.name} is {mask_arr.shape[1]}x{mask_arr.shape[0]}, roi is {expected[0]}x{expected[1]}"))
                continue
        loaded.append((entry, ProbMask(mask_arr / 255.0)))
    return loaded, issues


def assemble_batch(image_sizes: Mapping[str, Size], loaded: Sequence[tuple[dict, ProbMask]],
                   cfg: PipelineConfig = PipelineConfig()) -> dict[str, list[Instance]]:
    """Turn externally produced ROI masks back into per-image instances."""
    per_image: dict[str, list[Instance]] = {}
    for entry, prob in loaded:
        image_id = entry["image_id"]
        if image_id not in image_sizes:
            raise BackendError(f"manifest references unknown image id {image_id!r}")
        box = BoundingBox.from_dict(entry["box"])
        inst = assemble_instance(image_sizes[image_id], box, entry["label"], float(entry["score"]), prob, cfg)
        if inst is not None:
            per_image.setdefault(image_id, []).append(inst)
    for instances in per_image.values():
        instances.sort(key=lambda i: (-i.score, i.box.x, i.box.y))
    return per_image


# --- instance serialization -------------------------------------------------------


def write_instances(per_image: Mapping[str, Sequence[Instance]], out_dir) -> None:
    """Write one 0/255 PNG per instance plus an index in instances.jsonl."""
    out_dir = Path(out_dir)
    inst_dir = out_dir / "instances"
    inst_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for image_id in sorted(per_image):
        for k, inst in enumerate(per_image[image_id]):
            rel = f"instances/{image_id}_{k}.png"
            write_binary_mask_png(inst.mask, out_dir / rel)
            lines.append(json.dumps({
                "image_id": image_id,
                "k": k,
                "label": inst.label,
                "score": inst.score,
                "box": inst.box.to_dict(),
                "mask": rel,
            }, sort_keys=True))
    (inst_dir / "instances.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))


def read_instances(out_dir) -> dict[str, list[Instance]]:
    """Inverse of :func:`write_instances`."""
    out_dir = Path(out_dir)
    index = out_dir / "instances" / "instances.jsonl"
    if not index.is_file():
        raise BackendError(f"no instances.jsonl under {out_dir}")
    per_image: dict[str, list[Instance]] = {}
    for line in index.read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        mask = read_binary_mask_png(out_dir / obj["mask"])
        inst = Instance(
            mask=mask,
            label=str(obj["label"]),
            score=float(obj["score"]),
            box=BoundingBox.from_dict(obj["box"]),
        )
        per_image.setdefault(str(obj["image_id"]), []).append(inst)
    return per_image

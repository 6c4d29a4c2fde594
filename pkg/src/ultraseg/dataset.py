"""Dataset ingestion, splitting, augmentation, and synthetic data generation.

The on-disk layout is the usual breast-ultrasound convention: one directory
per class (``benign``/``malignant``/``normal``), each image ``name.png``
accompanied by ``name_mask.png`` and optionally ``name_mask_1.png``, ... .
Ground-truth boxes are not annotated separately; they are extracted from the
masks, one instance per 8-connected mask component, and expanded by a fixed
pixel offset so crops keep the contrast between lesion edge and surrounding
tissue.

All randomness in this module flows from explicit seeds through
:func:`stable_seed`, so splits, augmentation, and synthetic corpora are
reproducible regardless of iteration order or parallelism.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import BoundingBox, expand_box
from .imaging import (
    BinaryMask,
    Image,
    connected_components,
    read_binary_mask_png,
    read_image_png,
    write_binary_mask_png,
    write_image_png,
)

log = logging.getLogger(__name__)

BENIGN = "benign"
MALIGNANT = "malignant"
NORMAL = "normal"
CLASS_NAMES = (BENIGN, MALIGNANT, NORMAL)
LESION_CLASSES = (BENIGN, MALIGNANT)

DEFAULT_BOX_OFFSET = 10

_MASK_SUFFIX = re.compile(r"_mask(_\d+)?$")


def stable_seed(*parts) -> int:
    """Collapse arbitrary labels into a reproducible 64-bit seed.

    Hash-based so that per-item seeds do not depend on iteration order; the
    same (seed, record id, copy index) always yields the same stream.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


@dataclass(frozen=True, eq=False)
class Lesion:
    """One ground-truth instance: full-size mask plus its tight and expanded boxes."""

    mask: BinaryMask
    tight_box: BoundingBox
    expanded_box: BoundingBox
    label: str

    def __post_init__(self):
        if self.label not in LESION_CLASSES:
            raise ValueError(f"lesion label must be one of {LESION_CLASSES}, got {self.label!r}")


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    """One scan with its ground-truth instances; ``normal`` records have none."""

    id: str
    image: Image
    label: str
    instances: tuple[Lesion, ...]

    def __post_init__(self):
        if self.label not in CLASS_NAMES:
            raise ValueError(f"record label must be one of {CLASS_NAMES}, got {self.label!r}")
        object.__setattr__(self, "instances", tuple(self.instances))
        if self.label == NORMAL and self.instances:
            raise ValueError(f"record {self.id!r} is normal but carries instances")
        for inst in self.instances:
            if inst.mask.size != self.image.size:
                raise ValueError(f"record {self.id!r}: instance mask size differs from image size")

    @property
    def stem(self) -> str:
        """File stem without the class prefix (inverse of the ingest id scheme)."""
        prefix = f"{self.label}__"
        return self.id[len(prefix):] if self.id.startswith(prefix) else self.id


def instances_from_mask(
    image: Image, mask: BinaryMask, label: str, offset_px: int = DEFAULT_BOX_OFFSET
) -> list[Lesion]:
    """Turn each 8-connected mask component into its own instance."""
    out = []
    for comp, tight in connected_components(mask):
        expanded = expand_box(tight, offset_px, image.size)
        out.append(Lesion(mask=comp, tight_box=tight, expanded_box=expanded, label=label))
    return out


# --- ingestion ---------------------------------------------------------------


@dataclass(frozen=True)
class LoadIssue:
    path: str
    message: str


@dataclass
class IngestResult:
    records: list[DatasetRecord]
    errors: list[LoadIssue] = field(default_factory=list)

    def class_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in CLASS_NAMES}
        for rec in self.records:
            counts[rec.label] += 1
        return counts


def _mask_paths_for(image_path: Path) -> list[Path]:
    stem = image_path.stem
    first = image_path.with_name(f"{stem}_mask.png")
    found = [first] if first.exists() else []
    extra = []
    for p in image_path.parent.glob(f"{stem}_mask_*.png"):
        m = re.fullmatch(rf"{re.escape(stem)}_mask_(\d+)", p.stem)
        if m:
            extra.append((int(m.group(1)), p))
    found.extend(p for _, p in sorted(extra))
    return found


def ingest(root, offset_px: int = DEFAULT_BOX_OFFSET) -> IngestResult:
    """Load a class-per-directory dataset into records.

    One record per image file, ordered lexicographically by path; every
    connected component of every mask file becomes a separate instance.
    Broken entries (unreadable files, image/mask size mismatches, a normal
    image with a nonempty mask, a lesion image with no mask file) are skipped
    and collected as :class:`LoadIssue` rows instead of aborting the load.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_dirs = [root / name for name in CLASS_NAMES if (root / name).is_dir()]
    if not class_dirs:
        raise DataError(f"dataset root {root} has no benign/malignant/normal subdirectories")

    records, errors = [], []

    def rel(p: Path) -> str:
        # load reports must stay portable, so never record absolute paths
        return p.relative_to(root).as_posix()

    for class_dir in class_dirs:
        label = class_dir.name
        for image_path in sorted(class_dir.glob("*.png")):
            if _MASK_SUFFIX.search(image_path.stem):
                continue
            rec_id = f"{label}__{image_path.stem}"
            try:
                image = read_image_png(image_path)
            except Exception as exc:
                errors.append(LoadIssue(rel(image_path), f"unreadable image: {exc}"))
                continue
            mask_paths = _mask_paths_for(image_path)
            instances: list[Lesion] = []
            failed = False
            for mask_path in mask_paths:
                try:
                    mask = read_binary_mask_png(mask_path)
                except Exception as exc:
                    errors.append(LoadIssue(rel(mask_path), f"unreadable mask: {exc}"))
                    failed = True
                    break
                if mask.size != image.size:
                    errors.append(
                        LoadIssue(rel(mask_path), f"mask size {mask.size} != image size {image.size}")
                    )
                    failed = True
                    break
                if label == NORMAL:
                    if mask.count() > 0:
                        errors.append(LoadIssue(rel(mask_path), "normal image has a nonempty mask"))
                        failed = True
                        break
                    continue
                instances.extend(instances_from_mask(image, mask, label, offset_px))
            if failed:
                continue
            if label != NORMAL and not mask_paths:
                errors.append(LoadIssue(rel(image_path), f"{label} image has no mask file"))
                continue
            records.append(DatasetRecord(id=rec_id, image=image, label=label, instances=tuple(instances)))
    return IngestResult(records=records, errors=errors)


def write_dataset(records, root) -> None:
    """Materialize records back into the class-per-directory layout.

    Each instance gets its own mask file (``_mask.png``, ``_mask_1.png``, ...),
    so re-ingesting preserves the mask pixels bit-exactly.
    """
    root = Path(root)
    for rec in records:
        class_dir = root / rec.label
        class_dir.mkdir(parents=True, exist_ok=True)
        write_image_png(rec.image, class_dir / f"{rec.stem}.png")
        if rec.label == NORMAL:
            write_binary_mask_png(BinaryMask.zeros(*rec.image.size), class_dir / f"{rec.stem}_mask.png")
            continue
        for k, inst in enumerate(rec.instances):
            suffix = "_mask.png" if k == 0 else f"_mask_{k}.png"
            write_binary_mask_png(inst.mask, class_dir / f"{rec.stem}{suffix}")


# --- splits -------------------------------------------------------------------


@dataclass(frozen=True)
class HoldoutSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    warnings: tuple[str, ...] = ()

    @property
    def trainval(self) -> tuple[str, ...]:
        """The cross-validation pool: everything not held out as test."""
        return self.train + self.val


@dataclass(frozen=True)
class FoldSplit:
    """Held-out test ids plus k stratified folds over the train-validation pool."""

    seed: int
    test: tuple[str, ...]
    folds: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "test", tuple(self.test))
        object.__setattr__(self, "folds", tuple(tuple(f) for f in self.folds))
        seen: set[str] = set(self.test)
        for fold in self.folds:
            for rec_id in fold:
                if rec_id in seen:
                    raise ValueError(f"id {rec_id!r} appears in more than one fold")
                seen.add(rec_id)

    @property
    def pool(self) -> tuple[str, ...]:
        return tuple(rec_id for fold in self.folds for rec_id in fold)

    def cv_pairs(self) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
        """For each fold i: (train = all other folds, validation = fold i)."""
        pairs = []
        for i, fold in enumerate(self.folds):
            train = tuple(rid for j, f in enumerate(self.folds) if j != i for rid in f)
            pairs.append((train, fold))
        return pairs

    def to_json_dict(self) -> dict:
        return {"seed": self.seed, "test": list(self.test), "folds": [list(f) for f in self.folds]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "FoldSplit":
        return cls(seed=int(d["seed"]), test=tuple(d["test"]), folds=tuple(tuple(f) for f in d["folds"]))


def write_split(split: FoldSplit, path) -> None:
    Path(path).write_text(json.dumps(split.to_json_dict(), indent=2, sort_keys=True) + "\n")


def read_split(path) -> FoldSplit:
    return FoldSplit.from_json_dict(json.loads(Path(path).read_text()))


def _apportion(n: int, ratios) -> list[int]:
    """Integer counts per ratio, remainders to the largest fractions first."""
    fracs = [Fraction(r).limit_denominator(10**9) for r in ratios]
    if sum(fracs) != 1:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    exact = [f * n for f in fracs]
    base = [int(e) for e in exact]
    remainder = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:remainder]:
        base[i] += 1
    return base


def _group_by_class(items) -> dict[str, list[str]]:
    ids = [rec_id for rec_id, _ in items]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids in split input")
    grouped: dict[str, list[str]] = {}
    for rec_id, label in items:
        grouped.setdefault(label, []).append(rec_id)
    return {label: sorted(grouped[label]) for label in sorted(grouped)}


def split_holdout(items, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> HoldoutSplit:
    """Stratified train/val/test split of (id, class) pairs.

    Deterministic for a given seed: ids are sorted, shuffled with a per-class
    seeded RNG, and sliced according to the apportioned counts. A class with
    fewer than three members still splits but raises a warning flag since its
    val/test shares may be empty.
    """
    grouped = _group_by_class(items)
    train: list[str] = []
    val: list[str] = []
    test: list[str] = []
    warnings: list[str] = []
    for label, ids in grouped.items():
        if len(ids) < 3:
            warnings.append(f"class {label!r} has only {len(ids)} items; val/test may be empty")
        rng = random.Random(stable_seed(seed, "holdout", label))
        rng.shuffle(ids)
        n_train, n_val, _ = _apportion(len(ids), ratios)
        train.extend(ids[:n_train])
        val.extend(ids[n_train : n_train + n_val])
        test.extend(ids[n_train + n_val :])
    return HoldoutSplit(train=tuple(sorted(train)), val=tuple(sorted(val)), test=tuple(sorted(test)), warnings=tuple(warnings))


def kfold_stratified(items, k: int = 9, seed: int = 0, test_ids=()) -> FoldSplit:
    """Class-stratified k folds: seeded shuffle per class, then round-robin.

    Per-class fold counts differ by at most one from count/k. `test_ids` are
    carried through untouched so the result is a complete split manifest.
    """
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    items = list(items)
    if k > len(items):
        raise ValueError(f"k={k} exceeds pool size {len(items)}")
    folds: list[list[str]] = [[] for _ in range(k)]
    for label, ids in _group_by_class(items).items():
        rng = random.Random(stable_seed(seed, "kfold", label))
        rng.shuffle(ids)
        for j, rec_id in enumerate(ids):
            folds[j % k].append(rec_id)
    return FoldSplit(seed=seed, test=tuple(test_ids), folds=tuple(tuple(sorted(f)) for f in folds))


# --- augmentation -------------------------------------------------------------

AUGMENT_MAX_ROTATION_DEG = 15.0
AUGMENT_SCALE_RANGE = (0.9, 1.1)
AUGMENT_BRIGHTNESS_RANGE = (-20.0, 20.0)
AUGMENT_CONTRAST_RANGE = (0.8, 1.2)
_MAX_RESAMPLE_ATTEMPTS = 10


@dataclass(frozen=True)
class AugmentParams:
    """One sampled transform: geometry shared by image and masks, photometry image-only."""

    flip: bool
    angle_deg: float
    scale: float
    brightness: float
    contrast: float


def sample_augment_params(record_id: str, copy_index: int, seed: int, attempt: int = 0) -> AugmentParams:
    """Draw the transform for one augmented copy from its stable per-item seed."""
    rng = random.Random(stable_seed(seed, "augment", record_id, copy_index, attempt))
    return AugmentParams(
        flip=rng.random() < 0.5,
        angle_deg=rng.uniform(-AUGMENT_MAX_ROTATION_DEG, AUGMENT_MAX_ROTATION_DEG),
        scale=rng.uniform(*AUGMENT_SCALE_RANGE),
        brightness=rng.uniform(*AUGMENT_BRIGHTNESS_RANGE),
        contrast=rng.uniform(*AUGMENT_CONTRAST_RANGE),
    )


def _inverse_warp_coords(width: int, height: int, params: AugmentParams) -> tuple[np.ndarray, np.ndarray]:
    """Source coordinates for every output pixel.

    Forward transform: horizontal flip first (x -> W-1-x), then rotation by
    angle_deg and isotropic scaling about the image center ((W-1)/2, (H-1)/2).
    The inverse therefore un-rotates/un-scales and flips last.
    """
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    theta = math.radians(params.angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    xo = np.arange(width, dtype=np.float64)[None, :] - cx
    yo = np.arange(height, dtype=np.float64)[:, None] - cy
    xs = (cos_t * xo + sin_t * yo) / params.scale + cx
    ys = (-sin_t * xo + cos_t * yo) / params.scale + cy
    xs, ys = np.broadcast_arrays(xs, ys)
    if params.flip:
        xs = (width - 1) - xs
    return xs, ys


def _sample_bilinear(arr: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Bilinear gather; taps outside the source contribute `fill`."""
    h, w = arr.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    src = arr.astype(np.float64)
    acc = np.zeros(xs.shape, dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.where(valid, src[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)], fill)
            acc += wy * wx * vals
    return acc


def _sample_nearest(arr: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill=0) -> np.ndarray:
    h, w = arr.shape
    xi = np.floor(xs + 0.5).astype(np.int64)
    yi = np.floor(ys + 0.5).astype(np.int64)
    valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    return np.where(valid, arr[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)], fill)


def warp_image(image: Image, params: AugmentParams) -> Image:
    """Geometric warp (bilinear) followed by the photometric adjustments."""
    xs, ys = _inverse_warp_coords(image.width, image.height, params)
    vals = _sample_bilinear(image.pixels, xs, ys, fill=0.0)
    vals = params.contrast * (vals - 128.0) + 128.0 + params.brightness
    return Image(np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8))


def warp_mask(mask: BinaryMask, params: AugmentParams) -> BinaryMask:
    """Same geometric warp as the image, nearest-resampled to stay binary."""
    xs, ys = _inverse_warp_coords(mask.width, mask.height, params)
    return BinaryMask(_sample_nearest(mask.pixels, xs, ys, fill=0).astype(np.uint8))


def apply_augment(record: DatasetRecord, params: AugmentParams, copy_id: str,
                  offset_px: int = DEFAULT_BOX_OFFSET) -> DatasetRecord | None:
    """Build one augmented copy; None if any instance left the frame entirely."""
    image = warp_image(record.image, params)
    new_instances = []
    for inst in record.instances:
        mask = warp_mask(inst.mask, params)
        ys, xs = np.nonzero(mask.pixels)
        if xs.size == 0:
            return None
        tight = BoundingBox(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
        expanded = expand_box(tight, offset_px, image.size)
        new_instances.append(Lesion(mask=mask, tight_box=tight, expanded_box=expanded, label=inst.label))
    return DatasetRecord(id=copy_id, image=image, label=record.label, instances=tuple(new_instances))


def augment(record: DatasetRecord, copies: int = 5, seed: int = 0,
            offset_px: int = DEFAULT_BOX_OFFSET) -> list[DatasetRecord]:
    """The original record plus `copies` independently transformed copies.

    A copy whose transform pushes an instance fully out of frame is resampled
    (fresh parameters, same stable seed chain) up to 10 times, then dropped
    with a warning; in practice the conservative parameter ranges make this
    rare.
    """
    if copies < 0:
        raise ValueError(f"copies must be >= 0, got {copies}")
    out = [record]
    for c in range(1, copies + 1):
        copy_id = f"{record.id}_aug{c}"
        produced = None
        for attempt in range(_MAX_RESAMPLE_ATTEMPTS):
            params = sample_augment_params(record.id, c, seed, attempt)
            produced = apply_augment(record, params, copy_id, offset_px)
            if produced is not None:
                break
        if produced is None:
            log.warning("dropping augmented copy %s: instance left the frame in %d attempts",
                        copy_id, _MAX_RESAMPLE_ATTEMPTS)
            continue
        out.append(produced)
    return out


# --- synthetic data -------------------------------------------------------------

_SYNTH_BG_LEVEL = 150.0
_SYNTH_FG_LEVEL = 72.0
_SYNTH_BG_NOISE = 14.0
_SYNTH_FG_NOISE = 10.0


def _star_mask(size: int, cx: float, cy: float, r_outer: float, ratio: float,
               spikes: int, phase: float, jitter: np.ndarray) -> np.ndarray:
    """Spiculated star polygon, star-convex about its center (always one component)."""
    n_vert = 2 * spikes
    base = np.where(np.arange(n_vert) % 2 == 0, r_outer, r_outer * ratio)
    radii = base * (1.0 + 0.08 * jitter)
    step = math.pi / spikes
    yy, xx = np.mgrid[0:size, 0:size]
    dx = xx - cx
    dy = yy - cy
    dist = np.hypot(dx, dy)
    rel = (np.arctan2(dy, dx) - phase) % (2.0 * math.pi)
    seg = np.minimum((rel / step).astype(np.int64), n_vert - 1)
    t = rel / step - seg
    r_at = radii[seg] * (1.0 - t) + radii[(seg + 1) % n_vert] * t
    return dist <= r_at


def _ellipse_mask(size: int, cx: float, cy: float, a: float, b: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dx = xx - cx
    dy = yy - cy
    u = (dx * math.cos(theta) + dy * math.sin(theta)) / a
    v = (-dx * math.sin(theta) + dy * math.cos(theta)) / b
    return u * u + v * v <= 1.0


def synth_generate(n_per_class: int, image_size: int = 256, seed: int = 0,
                   offset_px: int = DEFAULT_BOX_OFFSET) -> list[DatasetRecord]:
    """Desk-scale stand-in corpus with exactly known ground truth.

    Benign records carry one smooth (rotated ellipse) hypoechoic lesion,
    malignant ones a spiculated star polygon, normal ones no lesion; all over
    multiplicative-looking speckle. Lesions are kept away from borders and
    above a minimum size so that box expansion never clips and detection
    matching at IoU 0.5 is safe. Bit-identical for identical seeds.
    """
    if n_per_class < 0:
        raise ValueError(f"n_per_class must be >= 0, got {n_per_class}")
    if image_size < 64:
        raise ValueError(f"image_size must be at least 64, got {image_size}")
    records = []
    margin = 0.18 * image_size
    for label in CLASS_NAMES:
        for i in range(n_per_class):
            rng = np.random.default_rng(stable_seed(seed, "synth", label, i))
            noise = rng.normal(0.0, 1.0, (image_size, image_size))
            lesion = None
            if label != NORMAL:
                cx = rng.uniform(margin, image_size - margin)
                cy = rng.uniform(margin, image_size - margin)
                if label == BENIGN:
                    a = rng.uniform(0.055 * image_size, 0.11 * image_size)
                    b = rng.uniform(0.055 * image_size, 0.11 * image_size)
                    theta = rng.uniform(0.0, math.pi)
                    lesion = _ellipse_mask(image_size, cx, cy, a, b, theta)
                else:
                    r_outer = rng.uniform(0.075 * image_size, 0.11 * image_size)
                    ratio = rng.uniform(0.65, 0.8)
                    spikes = int(rng.integers(7, 12))
                    phase = rng.uniform(0.0, 2.0 * math.pi)
                    jitter = rng.uniform(-1.0, 1.0, size=2 * spikes)
                    lesion = _star_mask(image_size, cx, cy, r_outer, ratio, spikes, phase, jitter)
            vals = _SYNTH_BG_LEVEL + _SYNTH_BG_NOISE * noise
            if lesion is not None:
                vals = np.where(lesion, _SYNTH_FG_LEVEL + _SYNTH_FG_NOISE * noise, vals)
            image = Image(np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8))
            instances: tuple[Lesion, ...] = ()
            if lesion is not None:
                mask = BinaryMask(lesion.astype(np.uint8))
                instances = tuple(instances_from_mask(image, mask, label, offset_px))
            records.append(DatasetRecord(
                id=f"{label}__synth_{i:03d}", image=image, label=label, instances=instances,
            ))
    return records

"""Axis-aligned bounding-box arithmetic on the integer pixel grid.

Boxes are closed-open rectangles [x, x+w) x [y, y+h): a box covers exactly
w*h pixels, so areas and intersections can be checked against a literal
pixel-count rasterization. All functions here are pure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Size = tuple[int, int]  # (width, height)
Point = tuple[int, int]  # (x, y)


@dataclass(frozen=True)
class BoundingBox:
    """Integer pixel rectangle: left/top corner plus positive width/height."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise TypeError(f"box field {name!r} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box must be at least 1x1, got {self.w}x{self.h}")

    @property
    def x2(self) -> int:
        """Exclusive right edge."""
        return self.x + self.w

    @property
    def y2(self) -> int:
        """Exclusive bottom edge."""
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def size(self) -> Size:
        return (self.w, self.h)

    def contains(self, point: Point) -> bool:
        px, py = point
        return self.x <= px < self.x2 and self.y <= py < self.y2

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox":
        return cls(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1].

    Pixel-area semantics: a box covers w*h grid cells, intersection is the
    overlap of the two half-open rectangles. Returns 0.0 for disjoint boxes.
    """
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two (n, 4) and (m, 4) arrays of [x, y, w, h] rows.

    Same semantics as :func:`iou`, vectorized; returns an (n, m) float array.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.int64))
    b = np.atleast_2d(np.asarray(b, dtype=np.int64))
    ax, ay, aw, ah = (a[:, i][:, None] for i in range(4))
    bx, by, bw, bh = (b[:, i][None, :] for i in range(4))
    iw = np.minimum(ax + aw, bx + bw) - np.maximum(ax, bx)
    ih = np.minimum(ay + ah, by + bh) - np.maximum(ay, by)
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = aw * ah + bw * bh - inter
    return np.where(inter > 0, inter / union, 0.0)


def clip_box(b: BoundingBox, bounds: Size) -> BoundingBox:
    """Intersect a box with the image rectangle [0, W) x [0, H).

    Raises ValueError if the box lies fully outside the image (such a box
    cannot come from a valid detection).
    """
    width, height = bounds
    x1 = max(b.x, 0)
    y1 = max(b.y, 0)
    x2 = min(b.x2, width)
    y2 = min(b.y2, height)
    if x2 <= x1 or y2 <= y1:
        raise ValueError(f"box {b} lies outside a {width}x{height} image")
    return BoundingBox(x1, y1, x2 - x1, y2 - y1)


def expand_box(b: BoundingBox, offset: int, bounds: Size) -> BoundingBox:
    """Grow width and height by `offset` pixels, keeping the center fixed.

    Half the offset is added on each side, then the result is clipped to the
    image; `offset` must therefore be even (an odd value has no symmetric
    split). offset=0 returns the box unchanged apart from clipping.
    """
    if offset < 0:
        raise ValueError(f"offset must be >= 0, got {offset}")
    if offset % 2 != 0:
        raise ValueError(f"offset must be even for a symmetric expansion, got {offset}")
    half = offset // 2
    grown = BoundingBox(b.x - half, b.y - half, b.w + offset, b.h + offset)
    return clip_box(grown, bounds)


def to_roi(point: Point, roi: BoundingBox) -> Point:
    """Translate an image-coordinate point into the ROI's local frame."""
    return (point[0] - roi.x, point[1] - roi.y)


def from_roi(point: Point, roi: BoundingBox) -> Point:
    """Inverse of :func:`to_roi`; valid for ROI coords in [0, w) x [0, h)."""
    return (point[0] + roi.x, point[1] + roi.y)

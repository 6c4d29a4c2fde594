"""Image and mask containers plus the pixel operations the pipeline is built on.

Three container kinds, all row-major numpy arrays of shape (height, width):

* ``Image``      -- 8-bit grayscale ultrasound scan, values 0..255
* ``BinaryMask`` -- ground-truth / binarized lesion mask, values {0, 1}
* ``ProbMask``   -- per-pixel predicted probabilities, float64 in [0, 1]

Containers are immutable once constructed (the underlying array is marked
read-only); every operation returns a new value, so all of them are safe to
share across threads.

Resampling follows one fixed convention so outputs are reproducible
bit-for-bit: align-corners=false source coordinates s = (d + 0.5)*scale - 0.5
with edge clamping, Catmull-Rom (a = -0.5) for bicubic, and round-half-up
when quantizing back to uint8.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .geometry import BoundingBox, Size

RESIZE_METHODS = ("nearest", "bilinear", "bicubic")

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def _validated(pixels, dtype, lo, hi, what: str) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{what} must be a 2-d array of at least 1x1, got shape {arr.shape}")
    if dtype == np.uint8 and np.issubdtype(arr.dtype, np.floating):
        raise TypeError(f"{what} requires integer pixel values, got {arr.dtype}")
    as_float = arr.astype(np.float64, copy=False)
    if not np.isfinite(as_float).all():
        raise ValueError(f"{what} values must all be finite")
    if as_float.min() < lo or as_float.max() > hi:
        raise ValueError(f"{what} values must lie in [{lo}, {hi}]")
    out = np.array(arr, dtype=dtype, copy=True, order="C")
    out.setflags(write=False)
    return out


class _Raster:
    """Shared shape/size accessors for the three container kinds."""

    pixels: np.ndarray

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def size(self) -> Size:
        return (self.width, self.height)

    @property
    def bounds(self) -> BoundingBox:
        return BoundingBox(0, 0, self.width, self.height)


@dataclass(frozen=True, eq=False)
class Image(_Raster):
    """Grayscale scan with uint8 intensities."""

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _validated(self.pixels, np.uint8, 0, 255, "Image"))

    @classmethod
    def full(cls, width: int, height: int, value: int = 0) -> "Image":
        return cls(np.full((height, width), value, dtype=np.uint8))


@dataclass(frozen=True, eq=False)
class BinaryMask(_Raster):
    """Strictly 0/1 mask, same grid as its image."""

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _validated(self.pixels, np.uint8, 0, 1, "BinaryMask"))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    def count(self) -> int:
        """Number of set pixels."""
        return int(self.pixels.sum())

    def as_prob(self) -> "ProbMask":
        return ProbMask(self.pixels.astype(np.float64))


@dataclass(frozen=True, eq=False)
class ProbMask(_Raster):
    """Per-pixel probabilities in [0, 1], float64."""

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _validated(self.pixels, np.float64, 0.0, 1.0, "ProbMask"))

    @classmethod
    def zeros(cls, width: int, height: int) -> "ProbMask":
        return cls(np.zeros((height, width), dtype=np.float64))


Raster = Image | BinaryMask | ProbMask


def to_grayscale(rgb: np.ndarray) -> Image:
    """Reduce an (h, w, 3) uint8 array to grayscale via integer luma.

    luma = floor(0.299 R + 0.587 G + 0.114 B + 0.5). Chroma carries no signal
    in ultrasound scans, so nothing fancier is warranted.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise ValueError(f"expected an (h, w, 3) array, got shape {rgb.shape}")
    luma = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return Image(np.floor(luma + 0.5).astype(np.uint8))


def connected_components(mask: BinaryMask) -> list[tuple[BinaryMask, BoundingBox]]:
    """Split a mask into its 8-connected components with tight boxes.

    Returns one (component mask, tight box) pair per component, ordered by
    each component's first set pixel in row-major scan order. Component masks
    are full-size and pairwise disjoint; their union is the input. The tight
    box is the minimal box containing the component. An all-zero mask yields
    an empty list.
    """
    labels, count = ndimage.label(mask.pixels, structure=_EIGHT_CONNECTED)
    found = []
    for lab in range(1, count + 1):
        sel = labels == lab
        ys, xs = np.nonzero(sel)
        box = BoundingBox(
            int(xs.min()),
            int(ys.min()),
            int(xs.max() - xs.min() + 1),
            int(ys.max() - ys.min() + 1),
        )
        found.append(((int(ys[0]), int(xs[0])), BinaryMask(sel.astype(np.uint8)), box))
    found.sort(key=lambda item: item[0])
    return [(comp, box) for _, comp, box in found]


def crop(raster: Raster, roi: BoundingBox) -> Raster:
    """Extract the sub-raster covered by `roi`; output pixel (u, v) = input(x+u, y+v)."""
    if roi.x < 0 or roi.y < 0 or roi.x2 > raster.width or roi.y2 > raster.height:
        raise ValueError(f"roi {roi} exceeds the {raster.width}x{raster.height} raster; clip first")
    return type(raster)(raster.pixels[roi.y : roi.y2, roi.x : roi.x2])


def paste(canvas: Raster, patch: Raster, roi: BoundingBox) -> Raster:
    """Return a copy of `canvas` with the `roi` region replaced by `patch`.

    Everything outside `roi` is untouched -- this is the box-refinement step:
    a prediction pasted back cannot reach outside its detection box.
    """
    if type(patch) is not type(canvas):
        raise TypeError(f"cannot paste {type(patch).__name__} onto {type(canvas).__name__}")
    if patch.size != roi.size:
        raise ValueError(f"patch size {patch.size} does not match roi size {roi.size}")
    if roi.x < 0 or roi.y < 0 or roi.x2 > canvas.width or roi.y2 > canvas.height:
        raise ValueError(f"roi {roi} exceeds the {canvas.width}x{canvas.height} canvas")
    out = canvas.pixels.copy()
    out[roi.y : roi.y2, roi.x : roi.x2] = patch.pixels
    return type(canvas)(out)


def _cubic_weight(d: np.ndarray) -> np.ndarray:
    # Catmull-Rom kernel, a = -0.5
    a = -0.5
    d = np.abs(d)
    w = np.where(
        d <= 1.0,
        (a + 2.0) * d**3 - (a + 3.0) * d**2 + 1.0,
        a * d**3 - 5.0 * a * d**2 + 8.0 * a * d - 4.0 * a,
    )
    return np.where(d < 2.0, w, 0.0)


def _axis_taps(n_in: int, n_out: int, method: str) -> tuple[np.ndarray, np.ndarray]:
    """Source indices and weights for one axis: (n_out, taps) each."""
    scale = n_in / n_out
    s = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    if method == "nearest":
        idx = np.floor(s + 0.5).astype(np.int64)[:, None]
        wts = np.ones_like(idx, dtype=np.float64)
    elif method == "bilinear":
        i0 = np.floor(s).astype(np.int64)
        frac = s - i0
        idx = np.stack([i0, i0 + 1], axis=1)
        wts = np.stack([1.0 - frac, frac], axis=1)
    elif method == "bicubic":
        i0 = np.floor(s).astype(np.int64)
        t = s - i0
        idx = np.stack([i0 - 1, i0, i0 + 1, i0 + 2], axis=1)
        wts = np.stack([_cubic_weight(t + 1.0), _cubic_weight(t), _cubic_weight(t - 1.0), _cubic_weight(t - 2.0)], axis=1)
    else:
        raise ValueError(f"unknown resize method {method!r}; expected one of {RESIZE_METHODS}")
    return np.clip(idx, 0, n_in - 1), wts


def resize(raster: Raster, target: Size, method: str = "bilinear") -> Raster:
    """Resample to `target` = (width, height) with the fixed convention above.

    BinaryMask accepts nearest only (interpolating bits is meaningless);
    ProbMask output is clamped back into [0, 1] since bicubic may overshoot.
    """
    width, height = int(target[0]), int(target[1])
    if width < 1 or height < 1:
        raise ValueError(f"target size must be at least 1x1, got {width}x{height}")
    if isinstance(raster, BinaryMask) and method != "nearest":
        raise ValueError(f"BinaryMask can only be resized with nearest, not {method!r}")
    if raster.size == (width, height):
        return type(raster)(raster.pixels)

    x_idx, x_wts = _axis_taps(raster.width, width, method)
    y_idx, y_wts = _axis_taps(raster.height, height, method)

    if isinstance(raster, BinaryMask):
        bits = raster.pixels[y_idx[:, 0][:, None], x_idx[:, 0][None, :]]
        return BinaryMask(bits)

    src = raster.pixels.astype(np.float64)
    # separable gather: rows first, then columns
    tmp = (src[y_idx, :] * y_wts[:, :, None]).sum(axis=1)
    out = (tmp[:, x_idx] * x_wts[None, :, :]).sum(axis=2)

    if isinstance(raster, Image):
        return Image(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))
    return ProbMask(np.clip(out, 0.0, 1.0))


def threshold(prob: ProbMask, t: float) -> BinaryMask:
    """Binarize a probability mask: bit = 1 iff prob >= t, with t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    return BinaryMask((prob.pixels >= t).astype(np.uint8))


# --- PNG serialization ------------------------------------------------------
#
# Image      <-> 8-bit grayscale PNG
# BinaryMask <-> 8-bit grayscale PNG holding 0/255
# ProbMask   <-> 16-bit grayscale PNG, prob = value / 65535


def _load_gray8(path) -> np.ndarray:
    with PILImage.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8)
        if im.mode in ("I", "I;16", "I;16B"):
            return (np.asarray(im, dtype=np.uint32) // 256).astype(np.uint8)
        rgb = np.asarray(im.convert("RGB"))
    return to_grayscale(rgb).pixels


def read_image_png(path) -> Image:
    """Load a PNG as a grayscale Image; color files are reduced via luma."""
    return Image(_load_gray8(path))


def write_image_png(image: Image, path) -> None:
    PILImage.fromarray(image.pixels).save(path, format="PNG")


def read_binary_mask_png(path) -> BinaryMask:
    return BinaryMask((_load_gray8(path) > 127).astype(np.uint8))


def write_binary_mask_png(mask: BinaryMask, path) -> None:
    PILImage.fromarray(mask.pixels * np.uint8(255)).save(path, format="PNG")


def read_prob_mask_png(path) -> ProbMask:
    with PILImage.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B"):
            raw = np.asarray(im, dtype=np.float64)
            return ProbMask(raw / 65535.0)
    return ProbMask(_load_gray8(path) / 255.0)


def write_prob_mask_png(prob: ProbMask, path) -> None:
    quantized = np.floor(prob.pixels * 65535.0 + 0.5).astype(np.uint16)
    PILImage.fromarray(quantized).save(path, format="PNG")


def write_rgb_png(rgb: np.ndarray, path) -> None:
    """Write an (h, w, 3) uint8 array; used for human-review overlays."""
    arr = np.asarray(rgb, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (h, w, 3) array, got shape {arr.shape}")
    PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")

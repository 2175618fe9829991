"""Domain types and pixel-exact image geometry.

Images are ``(H, W, 3)`` float arrays in [0, 1]; masks are ``(H, W)`` arrays
with values in {0, 1}. Boxes use the half-open convention
``[x_min, x_max) x [y_min, y_max)`` in pixel coordinates, x along columns.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage


class GeometryError(ValueError):
    """Box or crop geometry that cannot be applied to the given image."""


class InvalidInputError(ValueError):
    pass


class MaskValueError(InvalidInputError):
    pass


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise GeometryError(f"empty or inverted box {self.as_list()}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return (self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2

    def as_list(self):
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def is_integral(self):
        return all(float(v).is_integer() for v in self.as_list())

    def rasterize(self, img_h, img_w):
        """Smallest integer box covering this one, clamped to the image.

        Minimum corners round down, maximum corners round up. Raises
        :class:`GeometryError` if nothing of the box is left inside.
        """
        # snap float noise like 10.000000000000002 before rounding outward
        x0 = max(0, math.floor(round(self.x_min, 9)))
        y0 = max(0, math.floor(round(self.y_min, 9)))
        x1 = min(img_w, math.ceil(round(self.x_max, 9)))
        y1 = min(img_h, math.ceil(round(self.y_max, 9)))
        if x1 <= x0 or y1 <= y0:
            raise GeometryError(f"box {self.as_list()} does not intersect a {img_h}x{img_w} image")
        return Box(x0, y0, x1, y1)


@dataclass(frozen=True)
class Detection:
    box: Box
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class CropGeometry:
    """Everything needed to map a square model output back to the image.

    The crop ``source_box`` is zero padded to a square of side ``scale_den``
    (``pad_top``/``pad_left`` pixels before the content) and then resized to
    ``output_size`` = ``scale_num`` pixels per side.
    """

    source_box: Box
    pad_top: int
    pad_left: int
    scale_num: int
    scale_den: int
    output_size: int

    @property
    def padded_side(self):
        return self.scale_den

    def to_dict(self):
        return {
            "source_box": self.source_box.as_list(),
            "pad_top": self.pad_top,
            "pad_left": self.pad_left,
            "scale_num": self.scale_num,
            "scale_den": self.scale_den,
            "output_size": self.output_size,
        }


def _check_int_box(box, h, w):
    if not box.is_integral():
        raise GeometryError(f"crop box must have integer coordinates, got {box.as_list()}")
    if box.x_min < 0 or box.y_min < 0 or box.x_max > w or box.y_max > h:
        raise GeometryError(f"box {box.as_list()} outside {h}x{w} image")
    return int(box.x_min), int(box.y_min), int(box.x_max), int(box.y_max)


def crop(image, box):
    """Sub-rectangle of an image or mask given an integer box inside it."""
    x0, y0, x1, y1 = _check_int_box(box, image.shape[0], image.shape[1])
    return image[y0:y1, x0:x1].copy()


def pad_to_square(image):
    """Zero-pad to a square of side max(H, W).

    Returns ``(padded, pad_top, pad_left)``; the odd remainder goes to the
    bottom/right.
    """
    h, w = image.shape[:2]
    s = max(h, w)
    top = (s - h) // 2
    left = (s - w) // 2
    out = np.zeros((s, s) + image.shape[2:], dtype=image.dtype)
    out[top:top + h, left:left + w] = image
    return out, top, left


def resize_nearest(image, out_h, out_w):
    """Nearest-neighbour resize: output (i, j) <- input (i*H//out_h, j*W//out_w)."""
    if out_h < 1 or out_w < 1:
        raise GeometryError(f"target size must be positive, got {out_h}x{out_w}")
    h, w = image.shape[:2]
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return image[rows[:, None], cols[None, :]]


def coverage(mask):
    """Fraction of foreground pixels."""
    mask = np.asarray(mask)
    if mask.size == 0:
        raise InvalidInputError("coverage of an empty mask")
    return float(np.count_nonzero(mask)) / mask.size


def crop_pipeline(image, box, output_size):
    """crop -> pad_to_square -> resize_nearest, returning the geometry too."""
    patch = crop(image, box)
    padded, top, left = pad_to_square(patch)
    side = padded.shape[0]
    out = resize_nearest(padded, output_size, output_size)
    geom = CropGeometry(box, top, left, output_size, side, output_size)
    return out, geom


def project_mask(pred, geom, full_h, full_w):
    """Map a square prediction back into a full-size, all-background mask.

    Padded-square pixel ``r`` takes the value of output pixel
    ``ceil(r * out / side)``, the first output pixel sampled from ``r``; this
    makes the round trip exact whenever the crop was not downscaled.
    """
    pred = np.asarray(pred)
    out_size = geom.output_size
    if pred.shape != (out_size, out_size):
        raise GeometryError(f"prediction shape {pred.shape} != ({out_size}, {out_size})")
    x0, y0, x1, y1 = _check_int_box(geom.source_box, full_h, full_w)
    h, w = y1 - y0, x1 - x0
    side = geom.scale_den
    if side != max(h, w) or geom.pad_top != (side - h) // 2 or geom.pad_left != (side - w) // 2:
        raise GeometryError("crop geometry inconsistent with its source box")
    idx = np.minimum((np.arange(side) * out_size + side - 1) // side, out_size - 1)
    rows = idx[geom.pad_top:geom.pad_top + h]
    cols = idx[geom.pad_left:geom.pad_left + w]
    full = np.zeros((full_h, full_w), dtype=np.uint8)
    full[y0:y1, x0:x1] = pred[rows[:, None], cols[None, :]] > 0
    return full


# ---------------------------------------------------------------- file io

def load_image(path):
    """8-bit RGB PNG -> float64 (H, W, 3) array in [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path, image):
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr).save(path, format="PNG")


def load_mask(path):
    """8-bit grayscale PNG with values in {0, 255} -> uint8 mask in {0, 1}."""
    with PILImage.open(path) as im:
        if im.mode not in ("L", "1", "P"):
            raise MaskValueError(f"{path}: mask must be grayscale, got mode {im.mode}")
        arr = np.asarray(im.convert("L"))
    bad = ~np.isin(arr, (0, 255))
    if bad.any():
        raise MaskValueError(f"{path}: illegal mask value {int(arr[bad][0])} (allowed 0 and 255)")
    return (arr == 255).astype(np.uint8)


def save_mask(path, mask):
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    PILImage.fromarray(arr).save(path, format="PNG")


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to a temp file beside ``path`` then rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)

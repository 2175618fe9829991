"""Detection post-processing and the detect-and-segment inference path.

Detector and segmenter objects are duck-typed:

* ``detector.detect(image) -> list[Detection]``
* ``segmenter.predict(batch) -> probabilities``, where ``batch`` is
  ``(N, S, S, 3)`` and the result ``(N, S, S)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import Box, GeometryError, InvalidInputError, crop_pipeline, project_mask
from .metrics import box_iou

MASK_THRESHOLD = 0.5


@dataclass(frozen=True)
class PostprocessParams:
    confidence_threshold: float = 0.3
    area_factor: float = 1.5
    nms_iou: float = 0.5
    output_size: int = 64

    def __post_init__(self):
        if not 0 <= self.confidence_threshold < 1:
            raise InvalidInputError(f"confidence_threshold {self.confidence_threshold} not in [0, 1)")
        if self.area_factor < 1:
            raise InvalidInputError(f"area_factor {self.area_factor} < 1")
        if self.output_size < 8:
            raise InvalidInputError(f"output_size {self.output_size} < 8")

    def to_dict(self):
        return asdict(self)


def filter_detections(dets, threshold):
    """Keep detections whose confidence is strictly above ``threshold``."""
    return [d for d in dets if d.confidence > threshold]


def nms(dets, iou_threshold):
    """Greedy non-maximum suppression, highest confidence first."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    kept = []
    for i in order:
        if all(box_iou(dets[i].box, dets[k].box) <= iou_threshold for k in kept):
            kept.append(i)
    return [dets[i] for i in kept]


def enlarge_box(box, area_factor, img_h, img_w):
    """Scale both sides by sqrt(area_factor) about the centre, then clamp."""
    s = math.sqrt(area_factor)
    cx, cy = box.center
    hw, hh = box.width * s / 2, box.height * s / 2
    return Box(
        max(0.0, cx - hw),
        max(0.0, cy - hh),
        min(float(img_w), cx + hw),
        min(float(img_h), cy + hh),
    )


def build_crop(image, box, params, enlarge=True):
    """Enlarge, rasterize, crop, pad and resize ``image`` around ``box``.

    Works on masks as well as RGB images. Returns ``(square, geometry)``.
    """
    h, w = image.shape[:2]
    if enlarge:
        ix0, iy0 = max(box.x_min, 0.0), max(box.y_min, 0.0)
        ix1, iy1 = min(box.x_max, float(w)), min(box.y_max, float(h))
        if ix1 <= ix0 or iy1 <= iy0:
            raise GeometryError(f"box {box.as_list()} does not intersect a {h}x{w} image")
        box = enlarge_box(box, params.area_factor, h, w)
    int_box = box.rasterize(h, w)
    return crop_pipeline(image, int_box, params.output_size)


def full_image_box(image):
    h, w = image.shape[:2]
    return Box(0, 0, w, h)


def segment_boxes(image, boxes, segmenter, params, enlarge=True):
    """Segment each box independently and union the projected masks."""
    h, w = image.shape[:2]
    crops, geoms = [], []
    for box in boxes:
        sq, geom = build_crop(image, box, params, enlarge=enlarge)
        crops.append(sq)
        geoms.append(geom)
    out = np.zeros((h, w), dtype=np.uint8)
    if not crops:
        return out, geoms
    probs = segmenter.predict(np.stack(crops))
    for p, geom in zip(probs, geoms):
        out |= project_mask(p > MASK_THRESHOLD, geom, h, w)
    return out, geoms


def segment_whole(image, segmenter, params):
    """Whole-image segmentation: pad to square, resize, predict, project back."""
    return segment_boxes(image, [full_image_box(image)], segmenter, params, enlarge=False)


def ds_infer(image, detector, segmenter, params=PostprocessParams()):
    """Detect, post-process, crop, segment and project back to the image.

    With no surviving detection the whole image is segmented instead and
    ``diagnostics["fallback"]`` is set.
    """
    raw = detector.detect(image)
    kept = nms(filter_detections(raw, params.confidence_threshold), params.nms_iou)
    diagnostics = {
        "n_raw": len(raw),
        "n_boxes": len(kept),
        "fallback": not kept,
        "boxes": [d.box.as_list() for d in kept],
        "confidences": [d.confidence for d in kept],
    }
    if kept:
        mask, geoms = segment_boxes(image, [d.box for d in kept], segmenter, params)
    else:
        mask, geoms = segment_whole(image, segmenter, params)
    diagnostics["crops"] = [g.to_dict() for g in geoms]
    return mask, diagnostics

"""Pixel-level segmentation metrics and box-level detection metrics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import InvalidInputError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class PixelMetrics:
    mcc: float
    dice: float
    iou: float

    def to_dict(self):
        return asdict(self)


def confusion(pred, truth):
    pred = np.asarray(pred) > 0
    truth = np.asarray(truth) > 0
    if pred.shape != truth.shape:
        raise InvalidInputError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = pred.size - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def pixel_metrics(c):
    """MCC, Dice and IoU from confusion counts.

    MCC is 0 whenever a marginal is empty; Dice and IoU are 1 when both masks
    are empty.
    """
    if c.total <= 0:
        raise InvalidInputError("no pixels evaluated")
    tp, fp, fn, tn = c.tp, c.fp, c.fn, c.tn
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = 0.0 if denom == 0 else (tp * tn - fp * fn) / math.sqrt(denom)
    err = tp + fp + fn
    dice = 1.0 if err == 0 else 2 * tp / (2 * tp + fp + fn)
    iou = 1.0 if err == 0 else tp / err
    return PixelMetrics(mcc, dice, iou)


def segmentation_metrics(pred, truth):
    return pixel_metrics(confusion(pred, truth))


def box_iou(a, b):
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def average_precision(dets_per_image, gts_per_image, iou_threshold=0.5):
    """Single-class AP with the all-point monotone precision envelope.

    Detections of all images are ranked by confidence (stable for ties).
    Each one is a true positive if it overlaps a not-yet-matched ground
    truth box of its own image with IoU >= ``iou_threshold`` (the best such
    box is consumed), otherwise a false positive.
    """
    if not 0 < iou_threshold <= 1:
        raise InvalidInputError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    if len(dets_per_image) != len(gts_per_image):
        raise InvalidInputError("detections and ground truths cover different image counts")
    n_gt = sum(len(g) for g in gts_per_image)
    if n_gt == 0:
        return 0.0
    pooled = [(d.confidence, img, d.box) for img, dets in enumerate(dets_per_image) for d in dets]
    pooled.sort(key=lambda t: -t[0])  # sort is stable
    used = [np.zeros(len(g), dtype=bool) for g in gts_per_image]
    tp = np.zeros(len(pooled))
    for k, (_, img, box) in enumerate(pooled):
        best, best_j = -1.0, -1
        for j, gt in enumerate(gts_per_image[img]):
            if used[img][j]:
                continue
            iou = box_iou(box, gt)
            if iou >= iou_threshold and iou > best:
                best, best_j = iou, j
        if best_j >= 0:
            used[img][best_j] = True
            tp[k] = 1
    if len(pooled) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(pooled) + 1)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))

import math

import numpy as np
import pytest
from oracles import all_ap_configurations, naive_metrics, pixel_iou, reference_ap

from woundseg.core import Box, Detection, InvalidInputError
from woundseg.metrics import ConfusionCounts, average_precision, box_iou, confusion, pixel_metrics, segmentation_metrics


def test_confusion_examples():
    ones = np.ones((4, 5))
    assert confusion(ones, ones) == ConfusionCounts(20, 0, 0, 0)
    t = np.random.default_rng(0).integers(0, 2, (6, 6))
    c = confusion(1 - t, t)
    assert c.tp == 0 and c.tn == 0
    truth = np.zeros((10, 10), int)
    truth.flat[:8] = 1
    pred = np.zeros((10, 10), int)
    pred.flat[:6] = 1
    pred.flat[50] = 1
    assert confusion(pred, truth) == ConfusionCounts(6, 1, 2, 91)
    with pytest.raises(InvalidInputError):
        confusion(np.ones((2, 2)), np.ones((2, 3)))


def test_pixel_metrics_examples():
    m = pixel_metrics(ConfusionCounts(100, 0, 0, 0))
    assert (m.mcc, m.dice, m.iou) == (0.0, 1.0, 1.0)
    m = pixel_metrics(ConfusionCounts(50, 0, 0, 50))
    assert (m.mcc, m.dice, m.iou) == (1.0, 1.0, 1.0)
    m = pixel_metrics(ConfusionCounts(6, 1, 2, 91))
    # independent scalar evaluation: (6*91 - 1*2) / sqrt(7*8*92*93)
    assert m.mcc == pytest.approx(544 / math.sqrt(7 * 8 * 92 * 93), abs=1e-15)
    assert round(m.mcc, 4) == 0.7859
    assert m.dice == pytest.approx(0.8)
    assert m.iou == pytest.approx(2 / 3)
    with pytest.raises(InvalidInputError):
        pixel_metrics(ConfusionCounts(0, 0, 0, 0))


def test_metrics_match_naive_oracle(rng):
    for _ in range(50):
        h, w = rng.integers(1, 33, 2)
        p = rng.random() * 0.6
        truth = (rng.random((h, w)) < p).astype(np.uint8)
        pred = (rng.random((h, w)) < rng.random()).astype(np.uint8)
        counts, mcc, dice, iou = naive_metrics(pred, truth)
        m = segmentation_metrics(pred, truth)
        assert confusion(pred, truth) == ConfusionCounts(*counts)
        assert abs(m.mcc - mcc) <= 1e-12 and abs(m.dice - dice) <= 1e-12 and abs(m.iou - iou) <= 1e-12


def test_metric_properties(rng):
    for _ in range(30):
        truth = (rng.random((12, 12)) < 0.3).astype(np.uint8)
        truth[0, 0], truth[0, 1] = 1, 0
        pred = (rng.random((12, 12)) < 0.3).astype(np.uint8)
        a, b = segmentation_metrics(pred, truth), segmentation_metrics(truth, pred)
        assert a.mcc == pytest.approx(b.mcc, abs=1e-15)
        assert segmentation_metrics(1 - pred, truth).mcc == pytest.approx(-a.mcc, abs=1e-12)
        assert a.dice >= a.iou
        assert a.dice == pytest.approx(2 * a.iou / (1 + a.iou), abs=1e-12)


def test_box_iou_examples_and_oracle(rng):
    b = Box(0, 0, 10, 10)
    assert box_iou(b, b) == 1.0
    assert box_iou(b, Box(10, 0, 20, 10)) == 0.0
    assert box_iou(b, Box(5, 5, 15, 15)) == pytest.approx(25 / 175)
    for _ in range(40):
        x0, y0 = rng.integers(0, 15, 2)
        a = (int(x0), int(y0), int(x0 + rng.integers(1, 10)), int(y0 + rng.integers(1, 10)))
        x0, y0 = rng.integers(0, 15, 2)
        c = (int(x0), int(y0), int(x0 + rng.integers(1, 10)), int(y0 + rng.integers(1, 10)))
        assert abs(box_iou(Box(*a), Box(*c)) - pixel_iou(a, c)) <= 1e-9


def _dets(boxes, confs=None):
    confs = confs or [1 - 0.1 * i for i in range(len(boxes))]
    return [Detection(Box(*b), c) for b, c in zip(boxes, confs)]


def test_ap_examples():
    gt = [Box(0, 0, 10, 10)]
    # IoU 0.6 and 0.4 detections
    assert average_precision([_dets([(0, 0, 10, 6)])], [gt]) == 1.0
    assert average_precision([_dets([(0, 0, 10, 4)])], [gt]) == 0.0
    gts = [Box(0, 0, 10, 10), Box(20, 0, 30, 10)]
    dets = _dets([(0, 0, 10, 10), (50, 50, 60, 60), (20, 0, 30, 10)])
    assert average_precision([dets], [gts]) == pytest.approx(0.5 + 0.5 * 2 / 3)
    assert average_precision([dets], [[]]) == 0.0
    assert average_precision([[]], [gts]) == 0.0


def test_ap_is_rank_only(rng):
    gts = [Box(0, 0, 10, 10), Box(20, 0, 30, 10)]
    boxes = [(0, 0, 10, 10), (21, 0, 31, 10), (50, 50, 60, 60), (0, 1, 10, 11)]
    confs = [0.2, 0.9, 0.5, 0.7]
    base = average_precision([_dets(boxes, confs)], [gts])
    for f in (lambda c: c ** 3, lambda c: 0.5 * c + 0.1, lambda c: math.sqrt(c)):
        assert average_precision([_dets(boxes, [f(c) for c in confs])], [gts]) == base


def test_ap_matches_enumeration_subset():
    for gts, boxes in all_ap_configurations(max_dets=3, max_gts=2):
        confs = [1 - 0.1 * i for i in range(len(boxes))]
        got = average_precision([_dets(boxes, confs)], [[Box(*g) for g in gts]])
        table = [[[pixel_iou(b, g) for g in gts] for b in boxes]]
        want = reference_ap([(0, i) for i in range(len(boxes))], len(gts), table, 0.5)
        assert abs(got - want) <= 1e-12


def test_ap_across_images_and_ties():
    gts = [[Box(0, 0, 10, 10)], [Box(0, 0, 10, 10)]]
    dets = [[Detection(Box(50, 50, 60, 60), 0.5)], [Detection(Box(0, 0, 10, 10), 0.5)]]
    # stable order: the false positive of image 0 ranks first
    assert average_precision(dets, gts) == pytest.approx(0.5 * 0.5)
    with pytest.raises(InvalidInputError):
        average_precision(dets, gts[:1])
    with pytest.raises(InvalidInputError):
        average_precision(dets, gts, iou_threshold=0)

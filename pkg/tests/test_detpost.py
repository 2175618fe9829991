import json
import math
from pathlib import Path

import numpy as np
import pytest

from woundseg.core import Box, Detection, GeometryError, InvalidInputError, crop_pipeline
from woundseg.detpost import (PostprocessParams, build_crop, ds_infer, enlarge_box, filter_detections, nms,
                              segment_boxes)
from woundseg.metrics import box_iou

GOLDEN = json.loads((Path(__file__).parent / "fixtures" / "geometry_golden.json").read_text())


def det(x0, y0, x1, y1, c):
    return Detection(Box(x0, y0, x1, y1), c)


def test_params_validation():
    with pytest.raises(InvalidInputError):
        PostprocessParams(confidence_threshold=1.0)
    with pytest.raises(InvalidInputError):
        PostprocessParams(area_factor=0.9)
    with pytest.raises(InvalidInputError):
        PostprocessParams(output_size=4)


def test_filter_golden():
    g = GOLDEN["filter"]
    dets = [det(0, 0, 1, 1, s) for s in g["scores"]]
    assert [d.confidence for d in filter_detections(dets, g["threshold"])] == g["kept"]
    assert filter_detections([], 0.3) == []
    assert filter_detections([det(0, 0, 1, 1, 0.1)], 0.3) == []
    kept = filter_detections(dets, 0.3)
    assert filter_detections(kept, 0.3) == kept


def test_nms_examples(rng):
    a = det(0, 0, 10, 10, 0.9)
    assert nms([a], 0.5) == [a]
    assert nms([det(0, 0, 10, 10, 0.8), a], 0.5) == [a]
    b = det(20, 20, 30, 30, 0.5)
    assert nms([a, b], 0.5) == [a, b]
    for _ in range(20):
        dets = [det(x, y, x + w, y + h, float(c)) for x, y, w, h, c in
                zip(*[rng.integers(0, 20, 8) for _ in range(2)], *[rng.integers(3, 12, 8) for _ in range(2)],
                    rng.random(8))]
        kept = nms(dets, 0.5)
        assert all(box_iou(p.box, q.box) <= 0.5 for i, p in enumerate(kept) for q in kept[i + 1:])
        assert nms(kept, 0.5) == kept


@pytest.mark.parametrize("case", GOLDEN["enlarge"])
def test_enlarge_golden(case):
    got = enlarge_box(Box(*case["box"]), case["factor"], case["img_h"], case["img_w"]).as_list()
    assert got == pytest.approx(case["result"], abs=1e-12)


def test_enlarge_examples():
    b = enlarge_box(Box(10, 10, 30, 30), 1.5, 100, 100)
    assert b.as_list() == pytest.approx([7.7525, 7.7525, 32.2475, 32.2475], abs=1e-4)
    assert abs(b.area / 400 - 1.5) < 1e-9
    assert enlarge_box(Box(10, 10, 30, 30), 1.0, 100, 100) == Box(10, 10, 30, 30)
    # scaling about the centre (5, 5) gives (-1.1237, 11.1237); clamping then cuts at 0
    assert enlarge_box(Box(0, 0, 10, 10), 1.5, 100, 100).as_list() == pytest.approx(
        [0, 0, 5 + 5 * math.sqrt(1.5), 5 + 5 * math.sqrt(1.5)], abs=1e-12)


def test_enlarge_properties(rng):
    for _ in range(100):
        x0, y0 = rng.uniform(0, 80, 2)
        b = Box(x0, y0, x0 + rng.uniform(0.5, 20), y0 + rng.uniform(0.5, 20))
        f = rng.uniform(1, 3)
        far = Box(b.x_min + 1000, b.y_min + 1000, b.x_max + 1000, b.y_max + 1000)
        big = enlarge_box(far, f, 1e6, 1e6)
        assert abs(big.area / far.area - f) / f < 1e-9
        cl = enlarge_box(b, f, 100, 100)
        cx, cy = b.center
        assert cl.x_min <= cx < cl.x_max and cl.y_min <= cy < cl.y_max
        assert cl.x_min >= 0 and cl.y_min >= 0 and cl.x_max <= 100 and cl.y_max <= 100


@pytest.mark.parametrize("case", GOLDEN["crops"])
def test_build_crop_golden(case):
    h, w = case["img_h"], case["img_w"]
    img = np.arange(h * w, dtype=np.int64).reshape(h, w) + 1
    params = PostprocessParams(output_size=case["output_size"])
    out, geom = build_crop(img, Box(*case["box"]), params)
    assert geom.source_box.as_list() == case["rasterized"]
    rows, cols = np.array(case["rows"]), np.array(case["cols"])
    valid = (rows[:, None] >= 0) & (cols[None, :] >= 0)
    expected = np.where(valid, img[np.maximum(rows, 0)[:, None], np.maximum(cols, 0)[None, :]], 0)
    assert np.array_equal(out, expected)


def test_build_crop_worked_example():
    img = np.random.default_rng(0).random((100, 100, 3))
    out, geom = build_crop(img, Box(10, 10, 30, 30), PostprocessParams(output_size=64))
    assert geom.source_box == Box(7, 7, 33, 33)
    assert geom.scale_den == 26 and (geom.pad_top, geom.pad_left) == (0, 0)
    assert out.shape == (64, 64, 3)


def test_build_crop_identity_and_errors():
    img = np.random.default_rng(0).random((64, 64, 3))
    out, geom = build_crop(img, Box(0, 0, 64, 64), PostprocessParams(output_size=64), enlarge=False)
    assert np.array_equal(out, img)
    with pytest.raises(GeometryError):
        build_crop(img, Box(70, 70, 80, 80), PostprocessParams())


class StubDetector:
    def __init__(self, dets):
        self.dets = dets

    def detect(self, image):
        return list(self.dets)


class ConstantSegmenter:
    def __init__(self, value):
        self.value = value

    def predict(self, batch):
        return np.full(batch.shape[:3], self.value)


def test_ds_infer_fallback_dimensions():
    img = np.zeros((40, 50, 3))
    mask, diag = ds_infer(img, StubDetector([det(0, 0, 5, 5, 0.2)]), ConstantSegmenter(0.9),
                          PostprocessParams(output_size=16))
    assert diag["fallback"] and diag["n_boxes"] == 0 and diag["n_raw"] == 1
    assert mask.shape == (40, 50) and mask.sum() == 40 * 50


def test_ds_infer_union_of_two_boxes():
    img = np.zeros((60, 60, 3))
    params = PostprocessParams(output_size=16)
    d1, d2 = det(2, 2, 10, 10, 0.9), det(30, 30, 50, 44, 0.8)
    seg = ConstantSegmenter(0.9)
    mask, diag = ds_infer(img, StubDetector([d1, d2]), seg, params)
    m1, _ = segment_boxes(img, [d1.box], seg, params)
    m2, _ = segment_boxes(img, [d2.box], seg, params)
    assert np.array_equal(mask, m1 | m2)
    assert diag["n_boxes"] == 2 and not diag["fallback"]
    assert len(diag["crops"]) == 2


def test_ds_infer_perfect_stubs_reproduce_mask(tiny_records):
    """Ground-truth boxes and a segmenter that returns the true crop mask."""
    params = PostprocessParams(output_size=64)
    for r in tiny_records[:6]:
        image, truth = r.image(), r.mask()
        table = {}
        for b in r.gt_boxes:
            sq, geom = build_crop(image, b, params)
            msq, _ = build_crop(truth, b, params)
            assert geom.scale_den <= params.output_size
            table[sq.astype(image.dtype).tobytes()] = msq

        class Seg:
            def predict(self, batch):
                return np.stack([table[c.tobytes()] for c in batch]).astype(float)

        mask, diag = ds_infer(image, StubDetector([Detection(b, 1.0) for b in r.gt_boxes]), Seg(), params)
        assert not diag["fallback"]
        assert np.array_equal(mask, truth)


def test_crop_pipeline_matches_build_crop_without_enlarge():
    img = np.random.default_rng(2).random((30, 20))
    out1, g1 = build_crop(img, Box(3, 4, 15, 9), PostprocessParams(output_size=16), enlarge=False)
    out2, g2 = crop_pipeline(img, Box(3, 4, 15, 9), 16)
    assert np.array_equal(out1, out2) and g1 == g2
    assert math.isclose(g1.scale_num / g1.scale_den, 16 / 12)

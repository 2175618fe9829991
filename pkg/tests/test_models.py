import math

import numpy as np
import pytest

from woundseg.core import Box
from woundseg.nn.models import DetectorModel, SegmenterModel, detector_decode, encode_targets


@pytest.mark.parametrize("variant", ["unet_lite", "convnet_lite"])
def test_segmenter_preserves_spatial_shape(variant, rng):
    m = SegmenterModel(variant, depth=3, base_channels=4, input_size=32, seed=0)
    out = m.forward(m.to_batch(rng.random((2, 32, 32, 3))))
    assert out.shape == (2, 1, 32, 32)
    prob = m.predict(rng.random((3, 32, 32, 3)))
    assert prob.shape == (3, 32, 32) and np.all((prob >= 0) & (prob <= 1))


def test_skip_connections_differ():
    u = SegmenterModel("unet_lite", 2, 4, 16, seed=0)
    c = SegmenterModel("convnet_lite", 2, 4, 16, seed=0)
    assert u.params["dec0.w"].shape[1] > c.params["dec0.w"].shape[1]


def test_model_validation():
    with pytest.raises(ValueError):
        SegmenterModel("fcn", 3, 8, 64)
    with pytest.raises(ValueError):
        SegmenterModel("unet_lite", 3, 8, 36)
    with pytest.raises(ValueError):
        DetectorModel(stride=6)


def test_detector_output_grid(rng):
    d = DetectorModel(stride=8, base_channels=4, input_size=64, seed=0)
    assert d.forward(d.to_batch(rng.random((1, 64, 64, 3)))).shape == (1, 5, 8, 8)


def test_cell_centre_containment():
    obj, _, pos = encode_targets([Box(8, 8, 24, 24)], 4, 4, 8)
    centres = {((j + 0.5) * 8, (i + 0.5) * 8) for i, j in zip(*np.nonzero(pos))}
    assert centres == {(12.0, 12.0), (12.0, 20.0), (20.0, 12.0), (20.0, 20.0)}
    assert obj.sum() == 4


def test_whole_image_box_makes_every_cell_positive():
    _, _, pos = encode_targets([Box(0, 0, 32, 32)], 4, 4, 8)
    assert pos.all()


def test_smallest_box_wins_overlap():
    big, small = Box(0, 0, 32, 32), Box(8, 8, 16, 16)
    _, off, pos = encode_targets([small, big], 4, 4, 8)
    # cell (1,1) has centre (12,12): distances to the small box are 4 px each
    assert np.allclose(np.exp(off[:, 1, 1]) * 8, 4)
    assert np.allclose(np.exp(off[:, 0, 0]) * 8, [4, 4, 28, 28])


def test_tiny_box_gets_the_cell_holding_its_centre():
    _, _, pos = encode_targets([Box(17, 1, 19, 3)], 4, 4, 8)
    assert list(zip(*np.nonzero(pos))) == [(0, 2)]


def test_zero_offsets_decode_to_two_strides():
    raw = np.zeros((5, 2, 2))
    dets = detector_decode(raw, 8, 16, 16)
    assert len(dets) == 4
    b = dets[0].box
    assert (b.x_min, b.y_min, b.x_max, b.y_max) == (0.0, 0.0, 12.0, 12.0)  # clamped at the border
    big = detector_decode(np.zeros((5, 4, 4)), 8, 32, 32)
    inner = [d.box for d in big if d.box.x_min > 0 and d.box.y_min > 0 and d.box.x_max < 32 and d.box.y_max < 32]
    assert all(math.isclose(b.width, 16) and math.isclose(b.height, 16) for b in inner) and inner


def test_decode_inverts_encode(rng):
    for _ in range(20):
        x0, y0 = rng.uniform(0, 20, 2)
        box = Box(x0, y0, x0 + rng.uniform(9, 40), y0 + rng.uniform(9, 40))
        obj, off, pos = encode_targets([box], 8, 8, 8)
        raw = np.concatenate([np.where(pos, 50.0, -50.0)[None], off])
        dets = detector_decode(raw, 8, 64, 64)
        got = [d.box for d in dets if d.confidence > 0.5]
        assert len(got) == int(pos.sum()) > 0
        for g in got:
            assert np.allclose(g.as_list(), [box.x_min, box.y_min, min(box.x_max, 64), min(box.y_max, 64)], atol=1e-6)


def test_very_negative_logits_give_zero_confidence():
    dets = detector_decode(np.concatenate([np.full((1, 2, 2), -1e4), np.zeros((4, 2, 2))]), 8, 16, 16)
    assert all(d.confidence == 0.0 for d in dets)


def test_same_seed_same_weights():
    a, b = SegmenterModel(seed=[4, 1]), SegmenterModel(seed=[4, 1])
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)

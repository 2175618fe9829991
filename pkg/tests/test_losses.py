import math

import numpy as np
import pytest

from woundseg.nn.autograd import ShapeError, Tensor
from woundseg.nn.losses import NumericError, box_l1_loss, focal_loss, weighted_bce_loss


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _plain_bce(z, y):
    p = 1 / (1 + np.exp(-z))
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def test_bce_single_pixel_closed_form():
    assert float(weighted_bce_loss(_t([[0.0]]), [[1.0]], 2.0).data) == pytest.approx(2 * math.log(2), abs=1e-12)


def test_bce_unit_weight_is_standard_bce(rng):
    z = rng.standard_normal((3, 1, 5, 5))
    y = (rng.random(z.shape) < 0.5).astype(float)
    assert float(weighted_bce_loss(_t(z), y, 1.0).data) == pytest.approx(_plain_bce(z, y), rel=1e-12)


def test_bce_is_stable_for_large_logits():
    loss = weighted_bce_loss(_t([[1000.0, -1000.0]]), [[0.0, 1.0]], 3.0)
    assert float(loss.data) == pytest.approx((1000 + 3 * 1000) / 2)


def test_bce_non_negative_and_vanishes_only_in_the_limit(rng):
    for _ in range(50):
        z = 5 * rng.standard_normal((1, 1, 4, 4))
        y = (rng.random(z.shape) < 0.5).astype(float)
        assert float(weighted_bce_loss(_t(z), y, rng.uniform(0.1, 10)).data) > 0
    y = np.array([[1.0, 0.0]])
    losses = [float(weighted_bce_loss(_t([[k, -k]]), y, 2.0).data) for k in (1.0, 5.0, 20.0, 40.0)]
    assert all(a > b for a, b in zip(losses, losses[1:])) and losses[-1] < 1e-16


def test_bce_errors():
    with pytest.raises(NumericError):
        weighted_bce_loss(_t([[np.nan]]), [[1.0]], 1.0)
    with pytest.raises(ShapeError):
        weighted_bce_loss(_t([[0.0, 0.0]]), [[1.0]], 1.0)
    with pytest.raises(ValueError):
        weighted_bce_loss(_t([[0.0]]), [[1.0]], 0.0)


def test_focal_closed_form():
    assert float(focal_loss(_t([0.0]), [1.0], 0.25, 2.0).data) == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-12)
    assert 0.25 * 0.25 * math.log(2) == pytest.approx(0.04332, abs=5e-6)


def test_focal_reduces_to_half_bce(rng):
    z = 3 * rng.standard_normal(40)
    y = (rng.random(40) < 0.3).astype(float)
    assert float(focal_loss(_t(z), y, 0.5, 0.0).data) == pytest.approx(0.5 * _plain_bce(z, y), rel=1e-12)


def test_focal_vanishes_for_confident_correct_predictions():
    z = np.array([30.0, -30.0])
    assert float(focal_loss(_t(z), [1.0, 0.0]).data) < 1e-20


def test_focal_shape_error():
    with pytest.raises(ShapeError):
        focal_loss(_t([0.0, 1.0]), [1.0])


def test_box_l1_examples():
    t = np.zeros((1, 4, 2, 2))
    pos = np.zeros((1, 2, 2), bool)
    pos[0, 1, 0] = True
    assert float(box_l1_loss(_t(t), t, pos).data) == 0.0
    p = t.copy()
    p[0, :, 1, 0] = 1.0
    p[0, :, 0, 0] = 50.0  # negative cell, ignored
    assert float(box_l1_loss(_t(p), t, pos, 1.0).data) == pytest.approx(1.0)
    assert float(box_l1_loss(_t(p), t, pos, 2.5).data) == pytest.approx(2.5)


def test_box_l1_no_positives_gives_zero_gradient():
    x = _t(np.ones((1, 4, 2, 2)))
    loss = box_l1_loss(x, np.zeros((1, 4, 2, 2)), np.zeros((1, 2, 2), bool))
    loss.backward()
    assert float(loss.data) == 0.0 and np.array_equal(x.grad, np.zeros((1, 4, 2, 2)))

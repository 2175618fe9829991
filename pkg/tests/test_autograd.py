import numpy as np
import pytest
from gradcheck import CASES, check_case

from woundseg.nn import autograd as ag
from woundseg.nn.autograd import ShapeError, Tensor


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradients_match_finite_differences(name):
    assert check_case(name, instances=20) < 1e-4


def test_relu_gradient_gate():
    x = Tensor(np.array([[-1.0, 2.0]]), requires_grad=True)
    ag.relu(x).backward(np.array([[5.0, 7.0]]))
    assert np.array_equal(x.grad, [[0.0, 7.0]])


def test_upsample_then_pool_constant_is_identity():
    x = Tensor(np.full((1, 2, 3, 4), 1.5))
    assert np.array_equal(ag.maxpool2d(ag.upsample2d(x)).data, x.data)


def test_gradients_accumulate():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    y = ag.add(x, x)
    ag.sum(y).backward()
    assert np.array_equal(x.grad, np.full((1, 1, 2, 2), 2.0))
    ag.sum(x).backward()
    assert np.array_equal(x.grad, np.full((1, 1, 2, 2), 3.0))


@pytest.mark.parametrize("call, op", [
    (lambda: ag.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3)))), "conv2d"),
    (lambda: ag.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 3, 5, 5)))), "conv2d"),
    (lambda: ag.maxpool2d(Tensor(np.zeros((1, 1, 3, 4)))), "maxpool2d"),
    (lambda: ag.concat([Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 2)))]), "concat"),
    (lambda: ag.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 3)))), "add"),
    (lambda: Tensor(np.zeros(3)).backward(), "backward"),
])
def test_shape_errors_name_the_op(call, op):
    with pytest.raises(ShapeError) as exc:
        call()
    assert exc.value.op == op


def test_deep_graph_backward_is_not_recursive():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x
    for _ in range(5000):
        y = ag.add(y, Tensor(np.zeros(3)))
    ag.sum(y).backward()
    assert np.array_equal(x.grad, np.ones(3))

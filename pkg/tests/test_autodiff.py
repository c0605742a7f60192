import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xladv.autodiff import (
    Graph,
    ShapeError,
    Tensor,
    constant,
    numerical_gradient,
    parameter,
    relative_error,
)

from conftest import check_gradients


def _away_from_zero(rng, shape):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 0.05, 0.05 * np.sign(x) + 0.05 * (x == 0), x)


def _weighted_sum(g, out, rng):
    r = constant(rng.normal(size=out.shape))
    return g.sum(g.mul(out, r))


# -- worked examples ---------------------------------------------------------


def test_matmul_by_hand():
    g = Graph()
    out = g.matmul(constant([[1.0, 2.0], [3.0, 4.0]]), constant([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.value, [[3.0], [7.0]])


def test_tanh_at_origin():
    assert Graph().tanh(constant([0.0])).value[0] == 0.0


def test_uniform_softmax_is_log_k():
    loss = Graph().softmax_cross_entropy_with_logits(constant(np.zeros((1, 4))), [2])
    assert abs(loss.item() - math.log(4)) < 1e-15


def test_sum_gradient_is_ones():
    x = parameter(np.arange(6.0).reshape(2, 3))
    g = Graph()
    g.backward(g.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_mean_of_square_gradient():
    x = parameter([1.0, 2.0, 3.0])
    g = Graph()
    g.backward(g.mean(g.mul(x, x)))
    np.testing.assert_allclose(x.grad, [2 / 3, 4 / 3, 2.0], rtol=0, atol=1e-15)


def test_grad_reverse_examples():
    x = parameter([1.5, -2.0])
    g = Graph()
    y = g.grad_reverse(x, 0.7)
    np.testing.assert_array_equal(y.value, [1.5, -2.0])

    x = parameter([0.0, 0.0])
    g = Graph()
    y = g.grad_reverse(x, 1.0)
    g.backward(g.sum(g.mul(y, constant([1.0, 2.0]))))
    np.testing.assert_array_equal(x.grad, [-1.0, -2.0])

    x = parameter([3.0])
    g = Graph()
    g.backward(g.sum(g.scale(g.grad_reverse(x, 0.0), 4.0)))
    assert x.grad[0] == 0.0


def test_grad_reverse_rejects_negative_lambda():
    with pytest.raises(ValueError):
        Graph().grad_reverse(parameter([1.0]), -0.1)


# -- structural behaviour ---------------------------------------------------


def test_shared_input_accumulates():
    x = parameter([2.0])
    g = Graph()
    y = g.add(g.mul(x, x), g.scale(x, 3.0))
    g.backward(g.sum(y))
    assert x.grad[0] == pytest.approx(2 * 2.0 + 3.0)


def test_constants_receive_no_gradient():
    c = constant([1.0, 2.0])
    x = parameter([3.0, 4.0])
    g = Graph()
    g.backward(g.sum(g.mul(c, x)))
    assert c.grad is None
    np.testing.assert_array_equal(x.grad, [1.0, 2.0])


def test_repeated_lookup_ids_accumulate():
    table = parameter(np.zeros((4, 2)))
    g = Graph()
    g.backward(g.sum(g.row_lookup(table, [1, 1, 3])))
    np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])


def test_lookup_out_of_range():
    with pytest.raises(IndexError):
        Graph().row_lookup(parameter(np.zeros((3, 2))), [3])


def test_shape_errors():
    g = Graph()
    with pytest.raises(ShapeError):
        g.matmul(constant(np.zeros((2, 3))), constant(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        g.add(constant(np.zeros((2, 3))), constant(np.zeros(2)))
    with pytest.raises(ShapeError):
        g.backward(g.mul(parameter([1.0, 2.0]), constant([1.0, 1.0])))


def test_backward_rejects_foreign_loss():
    g1, g2 = Graph(), Graph()
    loss = g1.sum(parameter([1.0]))
    g2.sum(parameter([2.0]))
    with pytest.raises(ValueError):
        g2.backward(loss)


def test_masked_softmax_ignores_illegal_classes():
    z = constant([[5.0, 0.0, 0.0]])
    loss = Graph().softmax_cross_entropy_with_logits(z, [1], legal=[[False, True, True]])
    assert loss.item() == pytest.approx(math.log(2), abs=1e-15)
    with pytest.raises(ValueError):
        Graph().softmax_cross_entropy_with_logits(z, [0], legal=[[False, True, True]])


def test_sigmoid_xent_stable_in_both_tails():
    g = Graph()
    loss = g.sigmoid_cross_entropy_with_logits(constant([[800.0], [-800.0]]), [[1.0], [0.0]])
    assert loss.item() == 0.0
    loss = g.sigmoid_cross_entropy_with_logits(constant([[-800.0]]), [[1.0]])
    assert loss.item() == pytest.approx(800.0)


def test_numerical_gradient_of_quadratic():
    x = parameter([1.0, -2.0, 0.5])
    num = numerical_gradient(lambda: float(np.sum(x.value ** 2)), x)
    np.testing.assert_allclose(num, 2 * x.value, rtol=1e-9)


def test_relative_error_floor():
    assert relative_error(np.array([1e-9]), np.array([0.0])) == pytest.approx(1e-4)
    assert relative_error(np.array([]), np.array([])) == 0.0


# -- finite-difference sweeps (100 seeded cases per op) ---------------------

CASES = range(100)


def _dims(rng, k):
    return [int(d) for d in rng.integers(1, 9, size=k)]


def _unary(op):
    def build(rng):
        m, n = _dims(rng, 2)
        a = parameter(_away_from_zero(rng, (m, n)))
        r = rng.normal(size=(m, n))
        return [a], lambda g: g.sum(g.mul(getattr(g, op)(a), constant(r)))

    return build


def _binary(op):
    def build(rng):
        m, n = _dims(rng, 2)
        a, b = parameter(rng.normal(size=(m, n))), parameter(rng.normal(size=(m, n)))
        r = rng.normal(size=(m, n))
        return [a, b], lambda g: g.sum(g.mul(getattr(g, op)(a, b), constant(r)))

    return build


def _matmul(rng):
    m, k, n = _dims(rng, 3)
    a, b = parameter(rng.normal(size=(m, k))), parameter(rng.normal(size=(k, n)))
    r = rng.normal(size=(m, n))
    return [a, b], lambda g: g.sum(g.mul(g.matmul(a, b), constant(r)))


def _bias_add(rng):
    m, n = _dims(rng, 2)
    a, b = parameter(rng.normal(size=(m, n))), parameter(rng.normal(size=n))
    r = rng.normal(size=(m, n))
    return [a, b], lambda g: g.sum(g.mul(g.add(a, b), constant(r)))


def _scale(rng):
    m, n = _dims(rng, 2)
    a, c = parameter(rng.normal(size=(m, n))), float(rng.normal())
    r = rng.normal(size=(m, n))
    return [a], lambda g: g.sum(g.mul(g.scale(a, c), constant(r)))


def _concat(rng):
    m, n1, n2 = _dims(rng, 3)
    axis = int(rng.integers(2))
    a = parameter(rng.normal(size=(m, n1)))
    b = parameter(rng.normal(size=(m, n2) if axis == 1 else (n2, n1)))
    shape = (m, n1 + n2) if axis == 1 else (m + n2, n1)
    r = rng.normal(size=shape)
    return [a, b], lambda g: g.sum(g.mul(g.concat([a, b], axis=axis), constant(r)))


def _slices(rng):
    m, n = (d + 1 for d in _dims(rng, 2))
    a = parameter(rng.normal(size=(m, n)))
    c0 = int(rng.integers(0, n))
    c1 = int(rng.integers(c0 + 1, n + 1))
    r0 = int(rng.integers(0, m))
    r1 = int(rng.integers(r0 + 1, m + 1))
    r = rng.normal(size=(r1 - r0, c1 - c0))
    return [a], lambda g: g.sum(g.mul(g.rows(g.columns(a, c0, c1), r0, r1), constant(r)))


def _lookup(rng):
    v, d, k = _dims(rng, 3)
    table = parameter(rng.normal(size=(v, d)))
    ids = rng.integers(0, v, size=k)
    r = rng.normal(size=(k, d))
    return [table], lambda g: g.sum(g.mul(g.row_lookup(table, ids), constant(r)))


def _mean(rng):
    m, n = _dims(rng, 2)
    a = parameter(rng.normal(size=(m, n)))
    return [a], lambda g: g.mean(g.mul(a, a))


def _softmax_xent(rng):
    m, k = _dims(rng, 2)
    z = parameter(3 * rng.normal(size=(m, k)))
    gold = rng.integers(0, k, size=m)
    legal = rng.random((m, k)) < 0.7
    legal[np.arange(m), gold] = True
    use_mask = bool(rng.integers(2))
    return [z], lambda g: g.softmax_cross_entropy_with_logits(z, gold, legal if use_mask else None)


def _sigmoid_xent(rng):
    m, n = _dims(rng, 2)
    z = parameter(3 * rng.normal(size=(m, n)))
    t = (rng.random((m, n)) < 0.5).astype(float)
    return [z], lambda g: g.sigmoid_cross_entropy_with_logits(z, t)


def _reverse(rng):
    m, n = _dims(rng, 2)
    a = parameter(rng.normal(size=(m, n)))
    lam = float(rng.uniform(0, 2))
    r = rng.normal(size=(m, n))
    # finite differences see the identity forward; backprop applies -lam
    return [a], lambda g: g.sum(g.mul(g.grad_reverse(a, lam), constant(r))), -lam


OPS = {
    "matmul": _matmul,
    "add": _binary("add"),
    "bias_add": _bias_add,
    "sub": _binary("sub"),
    "mul": _binary("mul"),
    "scale": _scale,
    "tanh": _unary("tanh"),
    "sigmoid": _unary("sigmoid"),
    "relu": _unary("relu"),
    "concat": _concat,
    "slices": _slices,
    "row_lookup": _lookup,
    "mean": _mean,
    "softmax_xent": _softmax_xent,
    "sigmoid_xent": _sigmoid_xent,
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    worst = 0.0
    for case in CASES:
        rng = np.random.default_rng(1000 + case)
        tensors, build = OPS[name](rng)
        worst = max(worst, check_gradients(build, tensors, rng, coords=64))
    assert worst < 1e-4, f"{name}: max relative error {worst:.2e}"


def test_grad_reverse_gradient_is_scaled_difference():
    for case in CASES:
        rng = np.random.default_rng(5000 + case)
        (a,), build, factor = _reverse(rng)
        g = Graph()
        g.backward(build(g))
        numeric = numerical_gradient(lambda: build(Graph()).item(), a)
        assert relative_error(a.grad, factor * numeric) < 1e-4


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=8),
    st.floats(0, 3, allow_nan=False),
)
def test_grad_reverse_property(values, lam):
    x = parameter(values)
    g = Graph()
    y = g.grad_reverse(x, lam)
    assert np.array_equal(y.value, x.value)
    g.backward(g.sum(y))
    np.testing.assert_array_equal(x.grad, np.full(len(values), -lam))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=8))
def test_sigmoid_matches_logistic(values):
    z = np.array(values)
    out = Graph().sigmoid(Tensor(z)).value
    np.testing.assert_allclose(out, 1.0 / (1.0 + np.exp(-z)), rtol=1e-12, atol=1e-300)

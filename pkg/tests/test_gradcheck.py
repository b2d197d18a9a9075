"""Central-difference verification of every primitive's backward rule."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from acfl import tensor as T
from acfl.gradcheck import gradcheck


def rng_for(seed):
    return np.random.default_rng(np.random.SeedSequence(seed))


def away_from_zero(rng, shape, lo=0.05, hi=2.0):
    """Samples with magnitude bounded away from zero, for kinked ops."""
    mag = rng.uniform(lo, hi, shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def test_linear_map_gradient_is_machine_exact():
    rng = rng_for(0)
    a = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    const = T.Tensor(rng.normal(size=(4, 2)))
    report = gradcheck(lambda t: T.sum_all(T.matmul(t, const)), [a])
    assert report.passed
    assert report.max_rel_err < 1e-9


def test_sigmoid_chain_gradcheck():
    rng = rng_for(1)
    x = T.Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    assert gradcheck(lambda t: T.sum_all(T.sigmoid(t)), [x]).passed


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_matmul_gradcheck(seed):
    rng = rng_for(seed)
    a = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = T.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    w = T.Tensor(rng.normal(size=(3, 2)))
    assert gradcheck(lambda p, q: T.sum_all(T.mul(T.matmul(p, q), w)), [a, b]).passed


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_softmax_gradcheck(seed):
    rng = rng_for(seed)
    x = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = T.Tensor(rng.normal(size=(3, 4)))
    assert gradcheck(lambda t: T.sum_all(T.mul(T.softmax_rows(t), w)), [x]).passed


def test_masked_softmax_gradcheck():
    rng = rng_for(4)
    x = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = T.Tensor(rng.normal(size=(3, 4)))
    mask = np.array([True, False, True, True])
    assert gradcheck(lambda t: T.sum_all(T.mul(T.softmax_rows(t, mask=mask), w)), [x]).passed


def test_relu_gradcheck_away_from_kink():
    rng = rng_for(5)
    x = T.Tensor(away_from_zero(rng, (3, 4)), requires_grad=True)
    w = T.Tensor(rng.normal(size=(3, 4)))
    assert gradcheck(lambda t: T.sum_all(T.mul(T.relu(t), w)), [x]).passed


def test_log_and_pow_gradcheck():
    rng = rng_for(6)
    x = T.Tensor(rng.uniform(0.2, 3.0, (2, 3)), requires_grad=True)
    assert gradcheck(lambda t: T.sum_all(T.log(t)), [x]).passed
    assert gradcheck(lambda t: T.sum_all(T.pow_scalar(t, 1.5)), [x]).passed


def test_reduction_and_broadcast_gradcheck():
    rng = rng_for(7)
    x = T.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    w = T.Tensor(rng.normal(size=(3,)))
    assert gradcheck(lambda t: T.sum_all(T.mul(T.mean_axes(t, (0, 2)), w)), [x]).passed
    y = T.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    row = T.Tensor(rng.normal(size=(1, 3)), requires_grad=True)
    wy = T.Tensor(rng.normal(size=(4, 3)))
    assert gradcheck(
        lambda a, r: T.sum_all(T.mul(T.broadcast_mul_row(a, r), wy)), [y, row]
    ).passed
    assert gradcheck(
        lambda a, r: T.sum_all(T.mul(T.broadcast_add_row(a, r), wy)), [y, row]
    ).passed


def test_slice_stack_transpose_reshape_gradcheck():
    rng = rng_for(8)
    x = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = T.Tensor(rng.normal(size=(1, 4)))

    def f(t):
        rows = [T.slice_row(t, i) for i in range(3)]
        restacked = T.stack_rows(rows[::-1])
        back = T.transpose(T.reshape(T.transpose(restacked), (4, 3)))
        return T.sum_all(T.mul(T.slice_row(back, 1), w))

    assert gradcheck(f, [x]).passed


def test_temporal_conv_gradcheck():
    rng = rng_for(9)
    x = T.Tensor(rng.normal(size=(2, 1, 7, 3, 2)), requires_grad=True)
    k = T.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    w = T.Tensor(rng.normal(size=(2, 1, 4, 3, 2)))
    assert gradcheck(
        lambda a, b: T.sum_all(T.mul(T.temporal_conv(a, b, 2), w)), [x, k]
    ).passed


def test_batch_norm_train_gradcheck():
    rng = rng_for(10)
    x = T.Tensor(rng.normal(size=(4, 1, 3, 2, 3)), requires_grad=True)
    gamma = T.Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
    beta = T.Tensor(rng.normal(size=3), requires_grad=True)
    w = T.Tensor(rng.normal(size=(4, 1, 3, 2, 3)))
    assert gradcheck(
        lambda a, g, b: T.sum_all(T.mul(T.batch_norm_train(a, g, b), w)), [x, gamma, beta]
    ).passed


def test_gradcheck_catches_a_wrong_gradient():
    """A deliberately broken backward rule must fail the check."""
    from acfl.tensor import _record

    x = T.Tensor(np.array([[0.7, -0.4]]), requires_grad=True)

    def broken_square(t):
        # claims d(x^2) = 3x instead of 2x
        out = T.Tensor(t.data ** 2)
        td = t.data
        _record(out, (t,), lambda g: (g * 3.0 * td,))
        return out

    report = gradcheck(lambda t: T.sum_all(broken_square(t)), [x])
    assert not report.passed

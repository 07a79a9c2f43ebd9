"""Reverse-mode tape: primitive gradients, vector ops, and the finite
difference harness."""

import math

import numpy as np
import pytest

from irtkit import autodiff as ad


def grad_of(program, point):
    _, g = ad.evaluate_with_gradient(program, np.asarray(point, dtype=float))
    return g


def test_log_sigmoid_at_zero():
    value, grad = ad.evaluate_with_gradient(
        lambda x: ad.vsum(ad.log_sigmoid(x)), np.array([0.0]))
    assert value == pytest.approx(-0.6931, abs=1e-4)
    assert grad[0] == pytest.approx(0.5, abs=1e-12)


def test_logsumexp_against_zero():
    value, grad = ad.evaluate_with_gradient(
        lambda x: ad.logsumexp_list([ad.vsum(x), 0.0]), np.array([0.0]))
    assert value == pytest.approx(math.log(2.0), abs=1e-12)
    assert grad[0] == pytest.approx(0.5, abs=1e-12)


def test_linear_program_fd_error_below_1e10():
    w = np.array([1.5, -2.0, 0.25])

    def program(x):
        return ad.vsum(x * w)

    err = ad.check_gradient(program, np.array([0.3, -1.2, 2.0]))
    assert err < 1e-10


@pytest.mark.parametrize("fn,domain", [
    (ad.exp, (-2.0, 2.0)),
    (ad.log, (0.1, 4.0)),
    (ad.log1p, (-0.6, 3.0)),
    (ad.expm1, (-2.0, 2.0)),
    (ad.sqrt, (0.1, 6.0)),
    (ad.square, (-3.0, 3.0)),
    (ad.tanh, (-3.0, 3.0)),
    (ad.sigmoid, (-4.0, 4.0)),
    (ad.log_sigmoid, (-4.0, 4.0)),
    (ad.log1m_sigmoid, (-4.0, 4.0)),
    (ad.normal_cdf, (-3.0, 3.0)),
    (ad.normal_logcdf, (-3.0, 3.0)),
    (ad.log_erfcx, (0.1, 5.0)),
    (ad.lgamma, (0.3, 6.0)),
])
def test_unary_primitives_match_finite_differences(fn, domain):
    rng = np.random.default_rng(hash(fn.__name__) % (2 ** 32))
    lo, hi = domain
    for _ in range(5):
        point = rng.uniform(lo, hi, size=4)
        err = ad.check_gradient(lambda x: ad.vsum(fn(x)), point)
        assert err < 1e-6, f"{fn.__name__} at {point}"


def test_arithmetic_and_pow_match_finite_differences():
    rng = np.random.default_rng(7)

    def program(x):
        a = ad.vslice(x, 0, 3)
        b = ad.vslice(x, 3, 6)
        return ad.vsum(a * b + a / (b * b + 1.0) - (a - b) + a ** 3.0 + 2.0 ** b)

    for _ in range(5):
        assert ad.check_gradient(program, rng.uniform(0.2, 2.0, size=6)) < 1e-6


def test_matrix_and_index_ops_match_finite_differences():
    rng = np.random.default_rng(11)
    m = rng.normal(size=(5, 3))
    idx = np.array([0, 2, 2, 1, 0])
    seg = np.array([0, 0, 1, 2, 1])

    def program(x):
        h = ad.matvec(m, x)
        g = ad.gather(h, idx)
        s = ad.segment_sum(g, seg, 3)
        return ad.vsum(s * s) + ad.vsum(ad.where(h.value > 0, h, 0.5 * h))

    for _ in range(5):
        assert ad.check_gradient(program, rng.normal(size=3)) < 1e-6


def test_matmul_reshape_fd():
    rng = np.random.default_rng(3)
    b = rng.normal(size=(4, 2))

    def program(x):
        xm = ad.reshape(x, (3, 4))
        return ad.vsum(ad.matmul(xm, b))

    assert ad.check_gradient(program, rng.normal(size=12)) < 1e-6


def test_linearity_of_gradients():
    rng = np.random.default_rng(19)
    point = rng.normal(size=4)
    a, b = 2.5, -1.25

    f = lambda x: ad.vsum(ad.exp(x) * np.arange(1.0, 5.0))
    g = lambda x: ad.vsum(ad.tanh(x))
    combo = lambda x: a * f(x) + b * g(x)

    expected = a * grad_of(f, point) + b * grad_of(g, point)
    np.testing.assert_allclose(grad_of(combo, point), expected, rtol=1e-12)


def test_determinism_bit_identical():
    rng = np.random.default_rng(23)
    point = rng.normal(size=6)

    def program(x):
        return ad.vsum(ad.log_sigmoid(x) + ad.sqrt(ad.square(x) + 1.0))

    v1, g1 = ad.evaluate_with_gradient(program, point)
    v2, g2 = ad.evaluate_with_gradient(program, point)
    assert v1 == v2
    assert np.array_equal(g1, g2)


def test_value_matches_plain_evaluation():
    point = np.array([0.3, -0.7])

    def program(x):
        return ad.vsum(ad.normal_logcdf(x) * 2.0)

    v_grad, _ = ad.evaluate_with_gradient(program, point)
    assert ad.evaluate(program, point) == v_grad


def test_nonfinite_value_flagged_not_thrown():
    value, grad = ad.evaluate_with_gradient(
        lambda x: ad.vsum(ad.log(x)), np.array([-1.0]))
    assert math.isnan(value)
    assert grad is None


def test_kink_reports_large_error():
    # branch-taken differentiation at a kink: documented failure mode
    def relu_like(x):
        return ad.vsum(ad.where(x.value > 0, x, 0.0 * x))

    err = ad.check_gradient(relu_like, np.array([0.0]))
    assert err > 0.4


def test_check_gradient_reports_worst_coordinate():
    # one coordinate exact, one deliberately mismatched via a custom node
    def program(x):
        exact = ad.vsum(x * np.array([1.0, 0.0]))
        second = ad.vsum(x * np.array([0.0, 1.0]))
        wrong = ad.custom([second], np.asarray(second.value), [np.array(0.5)])
        return exact + wrong

    err = ad.check_gradient(program, np.array([0.4, 0.8]))
    assert err == pytest.approx(0.5, abs=1e-6)

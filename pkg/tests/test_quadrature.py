import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from invlab.quadrature import (ball_integral, box_integral, radial_integral, tensor_rule,
                               uniform_refinement_errors, unit_ball_volume, unit_sphere_area)


@pytest.mark.parametrize("d, vol", [(1, 2.0), (2, math.pi), (3, 4.0 * math.pi / 3.0),
                                    (4, math.pi ** 2 / 2.0)])
def test_unit_ball_volume(d, vol):
    assert unit_ball_volume(d) == pytest.approx(vol, rel=1e-14)
    assert unit_sphere_area(d) == pytest.approx(d * vol, rel=1e-14)


def test_tensor_rule_exact_for_degree_13():
    nodes, weights = tensor_rule(7, 2)
    assert weights.sum() == pytest.approx(4.0, rel=1e-14)
    v = np.sum(weights * nodes[:, 0] ** 12 * nodes[:, 1] ** 2)
    assert v == pytest.approx(2.0 / 13.0 * 2.0 / 3.0, rel=1e-13)


def test_box_integral_gaussian():
    res = box_integral(lambda X: np.exp(-np.sum(X * X, axis=1)), [-6, -6], [6, 6], atol=1e-12)
    assert res.converged
    assert res.value == pytest.approx(math.pi, abs=1e-11)


def test_box_integral_vector_valued_and_callable_target():
    def f(X):
        return np.stack([np.cos(X[:, 0]), np.ones(len(X))], axis=1)
    res = box_integral(f, [0.0], [1.0], atol=lambda v: 1e-12 * abs(v[1]))
    np.testing.assert_allclose(res.value, [math.sin(1.0), 1.0], rtol=1e-13)


def test_budget_exhaustion_is_flagged():
    res = box_integral(lambda X: np.abs(X[:, 0] - 1.0 / 3.0) ** 0.1, [0, 0], [1, 1], atol=1e-15, max_cells=64)
    assert not res.converged
    assert res.n_cells <= 64


def test_box_guards():
    with pytest.raises(ValueError):
        box_integral(lambda X: X[:, 0], [0] * 5, [1] * 5)
    with pytest.raises(ValueError):
        box_integral(lambda X: X[:, 0], [1.0], [1.0])


def test_ball_integral_with_kink_matches_scipy():
    # |x|^{-2} outside the unit ball, 1 inside: mu(B_3) = pi + 2 pi ln 3
    f = lambda X: np.where(np.sum(X * X, 1) > 1, 1.0 / np.maximum(np.sum(X * X, 1), 1.0), 1.0)  # noqa: E731
    res = ball_integral(f, 2, 3.0, kink_radii=[1.0], atol=1e-11)
    oracle = integrate.quad(lambda s: 2 * math.pi * s * (1.0 if s <= 1 else s ** -2.0), 0, 3, points=[1.0])[0]
    assert res.value == pytest.approx(oracle, abs=1e-10)
    assert res.value == pytest.approx(math.pi + 2 * math.pi * math.log(3.0), abs=1e-10)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_ball_integral_constant(d):
    res = ball_integral(lambda X: np.ones(len(X)), d, 2.0, atol=1e-10)
    assert res.value == pytest.approx(unit_ball_volume(d) * 2.0 ** d, rel=1e-12)


def test_shell_integral():
    res = ball_integral(lambda X: np.ones(len(X)), 3, 2.0, inner_radius=1.0, atol=1e-10)
    assert res.value == pytest.approx(4.0 * math.pi / 3.0 * 7.0, rel=1e-12)
    with pytest.raises(ValueError):
        ball_integral(lambda X: np.ones(len(X)), 2, 1.0, inner_radius=1.0)


def test_radial_integral_gaussian():
    res = radial_integral(lambda s: np.exp(-s * s), 3, 8.0)
    assert res.value == pytest.approx(math.pi ** 1.5, rel=1e-12)


def test_refinement_errors_shrink_on_smooth_integrand():
    errs = uniform_refinement_errors(lambda X: np.exp(np.sin(3 * X[:, 0]) * X[:, 1]), [0, 0], [2, 2], 4)
    for a, b in zip(errs, errs[1:]):
        if a > 1e-14:
            assert b <= a / 2.0


@given(a=st.floats(-3, 3), b=st.floats(0.1, 4))
def test_polynomial_exactness(a, b):
    # the order-7 rule integrates cubics in each variable without refinement
    f = lambda X: 1 + X[:, 0] ** 3 - 2 * X[:, 0] * X[:, 1] ** 2  # noqa: E731
    res = box_integral(f, [a, 0], [a + b, 1], atol=np.inf)
    x1, x0 = a + b, a
    want = b + (x1 ** 4 - x0 ** 4) / 4 - 2 * (x1 ** 2 - x0 ** 2) / 2 / 3
    assert res.value == pytest.approx(want, rel=1e-12, abs=1e-12)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from invlab.coefficients import (CoefficientField, DensityError, DensitySpec, FactorizationError,
                                 apply_L, apply_L_dual, apply_L_symmetric, check_ellipticity,
                                 diffusion_factor, drift_decomposition)
from invlab.fields import ScalarField
from invlab.gallery import instantiate, list_cases, psi_profile


def _square_norm(d):
    return ScalarField(lambda X: np.sum(X * X, axis=1), lambda X: 2.0 * X,
                       lambda X: np.broadcast_to(2.0 * np.eye(d), (X.shape[0], d, d)).copy())


def _one_plus_square(d):
    sq = _square_norm(d)
    return ScalarField(lambda X: 1.0 + sq.value(X), sq.gradient, sq.hessian)


def _rng_points(n, d, scale=2.0, seed=0):
    return np.random.default_rng(seed).uniform(-scale, scale, size=(n, d))


# -- operator application ----------------------------------------------------------

def test_half_laplacian_of_square_norm():
    cf = CoefficientField.constant(np.eye(3), lambda X: np.zeros_like(X))
    X = _rng_points(10, 3)
    np.testing.assert_allclose(apply_L(cf, _square_norm(3), X), 3.0, rtol=1e-14)
    assert apply_L(cf, _square_norm(3), [0.3, -1.0, 2.0]) == pytest.approx(3.0)


@pytest.mark.parametrize("d, m", [(2, -2.0), (3, 1.5), (2, 0.5)])
def test_radial_power_lyapunov_value(d, m):
    # outside the unit ball, L (1 + |x|^2) = trace(A) + 2 <G, x> = d + m
    case = instantiate("radial-power", d=d, m=m)
    X = _rng_points(200, d, scale=5.0, seed=1)
    X = X[np.linalg.norm(X, axis=1) > 1.01]
    np.testing.assert_allclose(apply_L(case.cf, _one_plus_square(d), X), d + m, rtol=1e-12, atol=1e-13)


def test_ou_on_quadratic():
    cf = CoefficientField.constant(2.0 * np.eye(2), lambda X: -X)
    X = _rng_points(25, 2, seed=2)
    want = 4.0 - 2.0 * np.sum(X * X, axis=1)
    np.testing.assert_allclose(apply_L(cf, _one_plus_square(2), X), want, rtol=1e-12, atol=1e-12)
    # the same value with finite-difference derivatives
    fd = ScalarField(lambda X: 1.0 + np.sum(X * X, axis=1))
    np.testing.assert_allclose(apply_L(cf, fd, X), want, rtol=1e-6, atol=1e-6)


def test_expression_coefficients_match_closures():
    cf = CoefficientField.from_expressions(2, ["2", "0", "2"], ["-x1", "-x2"])
    X = _rng_points(10, 2, seed=3)
    np.testing.assert_allclose(cf.A(X), np.broadcast_to(2 * np.eye(2), (10, 2, 2)))
    np.testing.assert_allclose(cf.G(X), -X)
    assert cf.constant_diffusion


def test_dual_equals_primal_without_perturbation():
    # G = beta for rho = e^{-|x|^2}: the perturbation vanishes and L' = L
    d = 2
    rho = DensitySpec(lambda X: np.exp(-np.sum(X * X, axis=1)))
    cf = CoefficientField.constant(np.eye(d), lambda X: -X)
    f = ScalarField(lambda X: np.sin(X[:, 0]) * np.cos(2 * X[:, 1]))
    X = _rng_points(20, d, seed=4)
    np.testing.assert_allclose(apply_L_dual(cf, rho, f, X), apply_L(cf, f, X), rtol=1e-6, atol=1e-8)


def test_dual_nonconservative_dual_operator():
    case = instantiate("dual-nonconservative", d=2, i=1)
    f = ScalarField(lambda X: np.sin(X[:, 0]) + X[:, 0] ** 2 * X[:, 1],
                    lambda X: np.stack([np.cos(X[:, 0]) + 2 * X[:, 0] * X[:, 1], X[:, 0] ** 2], axis=1),
                    lambda X: np.stack([np.stack([-np.sin(X[:, 0]) + 2 * X[:, 1], 2 * X[:, 0]], axis=1),
                                        np.stack([2 * X[:, 0], np.zeros(len(X))], axis=1)], axis=1))
    X = _rng_points(20, 2, seed=5)
    grad, hess = f.gradient(X), f.hessian(X)
    want = 0.5 * (hess[:, 0, 0] + hess[:, 1, 1]) + (0.5 - 0.5 * np.exp(-X[:, 0])) * grad[:, 0]
    np.testing.assert_allclose(apply_L_dual(case.cf, case.rho, f, X), want, rtol=1e-12, atol=1e-12)


def test_dual_of_psi_lyapunov():
    case = instantiate("dual-nonconservative", d=1, i=1)
    V = case.extras["lyapunov"].V
    x = np.linspace(-np.log(3.0) + 0.05, 4.0, 30)[:, None]  # y = e^{-x} inside (0, 3)
    y = np.exp(-x[:, 0])
    _, d1, d2 = psi_profile(y)
    want = 0.5 * (d2 + d1) * y * y
    np.testing.assert_allclose(apply_L_dual(case.cf, case.rho, V, x), want, rtol=1e-12, atol=1e-14)


# -- drift decomposition -------------------------------------------------------------

def test_beta_of_exponential_density():
    d = 3
    rho = DensitySpec(lambda X: np.exp(X[:, 0]))  # finite-difference gradient
    cf = CoefficientField.constant(np.eye(d), lambda X: np.zeros_like(X))
    dec = drift_decomposition(cf, rho)
    X = _rng_points(10, d, seed=6)
    want = np.zeros((10, d))
    want[:, 0] = 0.5
    np.testing.assert_allclose(dec.beta(X), want, atol=1e-9)


def test_beta_of_shifted_double_exponential():
    case = instantiate("dual-nonconservative", d=2, i=2)
    dec = drift_decomposition(case.cf, case.measure("mu_tilde"))
    X = _rng_points(20, 2, seed=7)
    want = np.zeros_like(X)
    want[:, 1] = 0.5 + 0.5 * np.exp(-X[:, 1])
    np.testing.assert_allclose(dec.beta(X), want, rtol=1e-12)
    np.testing.assert_allclose(dec.perturbation(X), 0.0, atol=1e-12)


def test_lebesgue_beta_vanishes():
    case = instantiate("constant-drift-two-measures", d=2, c=[1.0, -0.5])
    dec = drift_decomposition(case.cf, case.rho)
    X = _rng_points(10, 2, seed=8)
    np.testing.assert_array_equal(dec.beta(X), 0.0)
    np.testing.assert_array_equal(dec.perturbation(X), case.cf.G(X))


def test_decomposition_sums_to_drift():
    case = instantiate("finite-plus-infinite-pair", d=2)
    dec = drift_decomposition(case.cf, case.rho)
    X = _rng_points(30, 2, scale=1.5, seed=9)
    np.testing.assert_allclose(dec.beta(X) + dec.perturbation(X), case.cf.G(X), rtol=1e-14)
    np.testing.assert_allclose(dec.dual_drift(X), 2 * dec.beta(X) - case.cf.G(X), rtol=1e-14)


def test_nonpositive_density_is_fatal():
    rho = DensitySpec(lambda X: X[:, 0])
    cf = CoefficientField.constant(np.eye(1), lambda X: np.zeros_like(X))
    f = ScalarField(lambda X: X[:, 0] ** 2)
    with pytest.raises(DensityError):
        apply_L_dual(cf, rho, f, [[-1.0]])


def _fd_copy(cf: CoefficientField, rho: DensitySpec):
    # same data with every derivative forced through finite differences
    cf_fd = CoefficientField(cf.d, cf._A, cf._G, name=cf.name + " (fd)")
    rho_fd = DensitySpec(rho.rho, None, name=rho.name + " (fd)")
    return cf_fd, rho_fd


def _gallery_measures():
    out = []
    for case_id, _ in list_cases():
        case = instantiate(case_id)
        for m in case.measures:
            out.append((case_id, m.role, case, m.density))
    return out


@pytest.mark.parametrize("case_id, role, case, rho", _gallery_measures(),
                         ids=[f"{c}-{r}" for c, r, _, _ in _gallery_measures()])
def test_finite_difference_beta_matches_analytic(case_id, role, case, rho):
    d = case.cf.d
    X = _rng_points(400, d, scale=1.4, seed=10)
    r = np.linalg.norm(X, axis=1)
    keep = np.all(np.abs(r[:, None] - np.array(case.cf.kink_radii + rho.kink_radii + (10.0,))) > 0.05, axis=1)
    if case_id == "series-density":
        # stay away from the singular points k e_1 and the cutoff seams
        Y = X.copy()
        Y[:, 0] -= np.rint(Y[:, 0])
        keep &= np.linalg.norm(Y, axis=1) > 0.05
    X = X[keep][:50]
    assert len(X) == 50
    exact = drift_decomposition(case.cf, rho).beta(X)
    cf_fd, rho_fd = _fd_copy(case.cf, rho)
    approx = drift_decomposition(cf_fd, rho_fd).beta(X)
    # relative to the two terms of beta, which cancel exactly for some cases
    scale = np.maximum(0.5 * np.linalg.norm(case.cf.row_divergence(X), axis=1)
                       + 0.5 * np.linalg.norm(np.einsum("nij,nj->ni", case.cf.A(X), rho.log_gradient(X)), axis=1),
                       1.0)
    rel = np.linalg.norm(approx - exact, axis=1) / scale
    assert rel.max() <= 1e-6


def test_row_divergence_convention():
    # A = [[x2^2, x1], [x1, 1]]: row divergences are (d1 a11 + d2 a12, d1 a21 + d2 a22) = (0 + 0, 1 + 0)
    cf = CoefficientField.from_expressions(2, ["1 + x2^2", "x1", "1"], ["0", "0"])
    X = _rng_points(5, 2, scale=0.3, seed=11)
    np.testing.assert_allclose(cf.row_divergence(X), np.tile([0.0, 1.0], (5, 1)), atol=1e-9)


# -- properties ----------------------------------------------------------------------

_coef = st.floats(-3.0, 3.0, allow_nan=False)


@given(a=_coef, b=_coef, seed=st.integers(0, 2 ** 16))
def test_apply_L_is_linear(a, b, seed):
    case = instantiate("exp-quadratic-two-finite", d=2)
    f = ScalarField(lambda X: np.sin(X[:, 0]) * X[:, 1], lambda X: np.stack(
        [np.cos(X[:, 0]) * X[:, 1], np.sin(X[:, 0])], axis=1), lambda X: np.stack([
            np.stack([-np.sin(X[:, 0]) * X[:, 1], np.cos(X[:, 0])], axis=1),
            np.stack([np.cos(X[:, 0]), np.zeros(len(X))], axis=1)], axis=1))
    g = _one_plus_square(2)
    X = _rng_points(8, 2, scale=1.0, seed=seed)
    lhs = apply_L(case.cf, f.linear_combination(a, g, b), X)
    rhs = a * apply_L(case.cf, f, X) + b * apply_L(case.cf, g, X)
    scale = abs(a) * np.abs(apply_L(case.cf, f, X)) + abs(b) * np.abs(apply_L(case.cf, g, X))
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * np.maximum(scale, 1.0))


@given(seed=st.integers(0, 2 ** 16), case_id=st.sampled_from(
    ["finite-plus-infinite-pair", "exp-quadratic-two-finite", "constant-drift-two-measures",
     "dual-nonconservative"]))
def test_symmetric_part_is_average(seed, case_id):
    case = instantiate(case_id, d=2)
    f = ScalarField(lambda X: np.exp(-np.sum((X - 0.3) ** 2, axis=1)))
    rho = case.measures[-1].density
    X = _rng_points(8, 2, scale=1.2, seed=seed)
    lhs = apply_L_dual(case.cf, rho, f, X) + apply_L(case.cf, f, X)
    sym = apply_L_symmetric(case.cf, rho, f, X)
    assert np.all(np.abs(lhs - 2 * sym) <= 1e-10 * np.maximum(np.abs(2 * sym), 1.0))


@given(seed=st.integers(0, 2 ** 16))
def test_factor_reproduces_diffusion(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(3, 3))
    base = M @ M.T + 0.1 * np.eye(3)
    cf = CoefficientField(3, lambda X: base[None] * (1.0 + np.sum(X * X, axis=1))[:, None, None],
                          lambda X: np.zeros_like(X))
    X = rng.normal(size=(16, 3))
    S = diffusion_factor(cf, X)
    A = cf.A(X)
    resid = np.max(np.abs(S @ np.swapaxes(S, 1, 2) - A), axis=(1, 2))
    assert np.all(resid <= 1e-12 * np.max(np.abs(A), axis=(1, 2)))
    assert np.all(np.triu(S, 1) == 0)


# -- ellipticity and factorisation ---------------------------------------------------------

def test_identity_ellipticity():
    cf = CoefficientField.constant(np.eye(2), lambda X: np.zeros_like(X))
    rep = check_ellipticity(cf, [5.0, -1.0], 3.0, samples=64)
    assert rep.passed and rep.lambda_min == pytest.approx(1.0) and rep.Lambda_max == pytest.approx(1.0)


def test_exponential_diffusion_ellipticity():
    case = instantiate("exp-quadratic-two-finite", d=2)
    rep = check_ellipticity(case.cf, [0.0, 0.0], 2.0, samples=256)
    assert rep.passed
    assert 1.0 <= rep.lambda_min and rep.Lambda_max <= math.exp(4.0)


def test_degenerate_diffusion_fails():
    cf = CoefficientField(2, lambda X: np.stack([np.stack([X[:, 0], 0 * X[:, 0]], 1),
                                                 np.stack([0 * X[:, 0], 1 + 0 * X[:, 0]], 1)], 1),
                          lambda X: np.zeros_like(X))
    rep = check_ellipticity(cf, [0.0, 0.0], 1.0, samples=32)
    assert not rep.passed
    with pytest.raises(FactorizationError) as exc:
        diffusion_factor(cf, [[-0.5, 0.0]])
    assert "1" in str(exc.value)


def test_single_sample_is_the_centre():
    cf = CoefficientField.constant(np.eye(2), lambda X: np.zeros_like(X))
    rep = check_ellipticity(cf, [1.0, 2.0], 1.0, samples=1)
    np.testing.assert_array_equal(rep.worst_point, [1.0, 2.0])
    with pytest.raises(ValueError):
        check_ellipticity(cf, [0.0, 0.0], 1.0, samples=0)


@pytest.mark.parametrize("A, want_sigma", [(np.eye(3), np.eye(3)), (2 * np.eye(2), math.sqrt(2) * np.eye(2))])
def test_constant_factors(A, want_sigma):
    cf = CoefficientField.constant(A, lambda X: np.zeros_like(X))
    np.testing.assert_allclose(diffusion_factor(cf, np.zeros(A.shape[0])), want_sigma, rtol=1e-15)


def test_exponential_factor_on_unit_sphere():
    case = instantiate("exp-quadratic-two-finite", d=2)
    x = np.array([math.cos(0.7), math.sin(0.7)])
    np.testing.assert_allclose(diffusion_factor(case.cf, x), math.exp(0.5) * np.eye(2), rtol=1e-14)
    # the Cholesky route agrees with the analytic one
    cf = CoefficientField(2, case.cf._A, case.cf._G)
    np.testing.assert_allclose(diffusion_factor(cf, x), math.exp(0.5) * np.eye(2), rtol=1e-14)


def test_outside_scope_flag():
    assert instantiate("brownian", d=1).cf.outside_scope
    assert not instantiate("brownian", d=2).cf.outside_scope
    with pytest.raises(ValueError):
        CoefficientField(0, None, None)


def test_asymmetric_constant_rejected():
    with pytest.raises(ValueError):
        CoefficientField.constant(np.array([[1.0, 0.5], [0.0, 1.0]]), lambda X: np.zeros_like(X))

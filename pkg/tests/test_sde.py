import math

import numpy as np
import pytest
from scipy import integrate, stats

from invlab.coefficients import CoefficientField, FactorizationError
from invlab.gallery import instantiate
from invlab.sde import (ALIVE, EXITED, STALLED, SimConfig, occupation_histogram, path_generator, simulate,
                        survival_probability)


def _bm(d):
    return CoefficientField.constant(np.eye(d), lambda X: np.zeros_like(X))


def _ou(d):
    return CoefficientField.constant(2.0 * np.eye(d), lambda X: -X)


def _within(est, want, se, k=3.0):
    return np.all(np.abs(np.asarray(est) - np.asarray(want)) <= k * np.asarray(se))


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(x=(0.0,), t=0.0)
    with pytest.raises(ValueError):
        SimConfig(x=(0.0,), t=1.0, h=-1.0)
    with pytest.raises(ValueError):
        SimConfig(x=(0.0,), t=1.0, paths=0)
    with pytest.raises(ValueError):
        SimConfig(x=(5.0, 0.0), t=1.0, R_kill=5.0)
    with pytest.raises(ValueError):
        SimConfig(x=(0.0,), t=1.0, scheme="milstein")
    with pytest.raises(ValueError):
        SimConfig(x=(0.0,), t=1.0, drift="backward")
    cfg = SimConfig(x=[1, 2], t=1.0)
    assert cfg.x == (1.0, 2.0) and cfg.d == 2
    assert cfg.replace(seed=3).seed == 3


def test_brownian_moments():
    N = 20_000
    ens = simulate(_bm(2), SimConfig(x=(0.0, 0.0), t=1.0, h=0.05, scheme="euler-maruyama", paths=N, seed=1))
    Y = ens.terminal
    assert np.all(ens.alive)
    assert _within(Y.mean(axis=0), 0.0, Y.std(axis=0, ddof=1) / math.sqrt(N))
    # the variance estimator's standard error for a normal sample is sqrt(2 / (N - 1)) sigma^2
    assert _within(Y.var(axis=0, ddof=1), 1.0, math.sqrt(2.0 / (N - 1)))


def test_ornstein_uhlenbeck_moments():
    N = 20_000
    x0 = np.array([2.0, 0.0])
    ens = simulate(_ou(2), SimConfig(x=tuple(x0), t=1.0, h=2e-3, scheme="euler-maruyama", paths=N, seed=2))
    Y = ens.terminal
    var = 1.0 - math.exp(-2.0)
    assert _within(Y.mean(axis=0), math.exp(-1.0) * x0, math.sqrt(var / N))
    assert _within(Y.var(axis=0, ddof=1), var, var * math.sqrt(2.0 / (N - 1)))


def test_halving_the_step_barely_moves_the_mean():
    N = 20_000
    base = SimConfig(x=(2.0, 0.0), t=1.0, h=1e-2, scheme="euler-maruyama", paths=N, seed=4)
    m1 = simulate(_ou(2), base).terminal.mean(axis=0)
    m2 = simulate(_ou(2), base.replace(h=5e-3, seed=5)).terminal.mean(axis=0)
    se = math.sqrt(2.0 * (1.0 - math.exp(-2.0)) / N)
    assert np.all(np.abs(m1 - m2) <= 2.0 * se)


@pytest.mark.parametrize("scheme", ["euler-maruyama", "tamed", "adaptive"])
def test_runs_are_bit_identical(scheme):
    case = instantiate("finite-plus-infinite-pair", d=2)
    cfg = SimConfig(x=(0.5, 0.0), t=0.5, h=1e-2, scheme=scheme, R_kill=3.0, paths=300, seed=11)
    a, b = simulate(case.cf, cfg), simulate(case.cf, cfg)
    np.testing.assert_array_equal(a.terminal, b.terminal)
    np.testing.assert_array_equal(a.status, b.status)
    np.testing.assert_array_equal(a.exit_time, b.exit_time)


def test_paths_do_not_depend_on_ensemble_size():
    cf = _ou(2)
    big = simulate(cf, SimConfig(x=(1.0, 0.0), t=0.3, h=1e-2, paths=500, seed=9))
    small = simulate(cf, SimConfig(x=(1.0, 0.0), t=0.3, h=1e-2, paths=37, seed=9))
    np.testing.assert_array_equal(big.terminal[:37], small.terminal)
    other = simulate(cf, SimConfig(x=(1.0, 0.0), t=0.3, h=1e-2, paths=37, seed=10))
    assert not np.array_equal(other.terminal, small.terminal)


def test_path_streams_are_independent():
    a = path_generator(0, 0).standard_normal(4)
    b = path_generator(0, 1).standard_normal(4)
    c = path_generator(1, 0).standard_normal(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    np.testing.assert_array_equal(a, path_generator(0, 0).standard_normal(4))
    with pytest.raises(ValueError):
        path_generator(-1, 0)


def test_exit_is_absorbing():
    cfg = SimConfig(x=(0.0, 0.0), t=2.0, h=1e-2, scheme="euler-maruyama", R_kill=1.5, paths=2000, seed=3,
                    level_radii=(0.5, 1.0, 1.5))
    ens = simulate(_bm(2), cfg)
    out = ens.status == EXITED
    assert 0 < out.sum() < cfg.paths
    r = np.linalg.norm(ens.terminal, axis=1)
    assert np.all(r[out] >= 1.5) and np.all(r[~out] < 1.5)
    assert np.all(ens.exit_time[out] <= cfg.t * (1 + 1e-12)) and np.all(np.isinf(ens.exit_time[~out]))
    # exited paths stop stepping; nested levels are passed in order
    assert np.all(ens.steps[out] <= ens.steps.max())
    lt = ens.level_times
    assert np.all(lt[:, 0] <= lt[:, 1]) and np.all(lt[:, 1] <= lt[:, 2])
    np.testing.assert_array_equal(lt[out, 2], ens.exit_time[out])


def test_dual_drift_equals_primal_without_perturbation():
    case = instantiate("ornstein-uhlenbeck", d=2)
    cfg = SimConfig(x=(1.0, -1.0), t=0.5, h=1e-2, paths=400, seed=6)
    primal = simulate(case.cf, cfg)
    dual = simulate(case.cf, cfg.replace(drift="dual"), rho=case.rho)
    np.testing.assert_array_equal(primal.terminal, dual.terminal)
    with pytest.raises(ValueError):
        simulate(case.cf, cfg.replace(drift="dual"))


def test_degenerate_diffusion_is_rejected():
    cf = CoefficientField(2, lambda X: np.stack([np.stack([X[:, 0], 0 * X[:, 0]], 1),
                                                 np.stack([0 * X[:, 0], 1 + 0 * X[:, 0]], 1)], 1),
                          lambda X: np.zeros_like(X))
    with pytest.raises(FactorizationError):
        simulate(cf, SimConfig(x=(-1.0, 0.0), t=0.1, paths=4))
    with pytest.raises(FactorizationError):
        drift_only = CoefficientField.constant(np.zeros((2, 2)), lambda X: -X)
        simulate(drift_only, SimConfig(x=(1.0, 0.0), t=0.1, paths=4))
    with pytest.raises(ValueError):
        simulate(_bm(3), SimConfig(x=(1.0, 0.0), t=0.1, paths=4))


def test_two_stage_starts_and_csv(tmp_path):
    starts = np.array([[0.0, 0.0], [5.0, 0.0], [0.1, 0.2]])
    ens = simulate(_bm(2), SimConfig(x=(0.0, 0.0), t=0.1, h=1e-2, R_kill=4.0, paths=3, seed=0), starts=starts)
    assert ens.status[1] == EXITED and ens.exit_time[1] == 0.0
    path = tmp_path / "ens.csv"
    ens.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "path,status,exit_time,x1,x2" and len(lines) == 4
    assert lines[2].split(",")[1] == "exited"


def test_adaptive_floor_marks_stalled_paths():
    case = instantiate("exp-quadratic-two-finite", d=2)
    cfg = SimConfig(x=(2.0, 0.0), t=0.1, h=1e-3, scheme="adaptive", R_kill=10.0, paths=50, floor=0.5)
    ens = simulate(case.cf, cfg)
    assert ens.n_stalled == 50 and ens.n_exited == 0
    assert np.all(ens.status == STALLED)
    # stalls are counted apart from exits
    relaxed = simulate(case.cf, cfg.replace(floor=1e-6))
    assert relaxed.n_stalled + relaxed.n_exited + int(relaxed.alive.sum()) == 50
    assert np.all(np.isinf(relaxed.exit_time[relaxed.status == STALLED]))
    tame = simulate(_ou(2), cfg.replace(floor=1e-6))
    assert tame.n_stalled == 0 and tame.min_step < cfg.h


# -- survival -------------------------------------------------------------------------

def test_constant_drift_survives():
    case = instantiate("constant-drift-two-measures", d=2)
    res = survival_probability(case.cf, SimConfig(x=(0.0, 0.0), t=1.0, h=1e-2, scheme="euler-maruyama",
                                                  R_kill=50.0, paths=2000, seed=0))
    assert res.p_hat == 1.0 and res.se == 0.0 and res.exited == 0
    assert [row["R_kill"] for row in res.sensitivity] == [50.0, 100.0]
    assert res.sensitivity[1]["p_hat"] == 1.0


def test_exponential_diffusion_loses_mass_at_both_radii():
    case = instantiate("exp-quadratic-two-finite", d=2)
    res = survival_probability(case.cf, SimConfig(x=(2.0, 0.0), t=1.0, h=1e-3, scheme="tamed", R_kill=10.0,
                                                  paths=2000, seed=0))
    assert res.p_hat < 0.05
    assert res.sensitivity[1]["p_hat"] < 0.05
    assert res.stalled == 0


# -- occupation -------------------------------------------------------------------------

def test_ornstein_uhlenbeck_occupation_matches_stationary_density():
    cf = _ou(2)
    cfg = SimConfig(x=(0.0, 0.0), t=50.0, h=1e-2, scheme="euler-maruyama", paths=1000, seed=8)
    hist = occupation_histogram(cf, cfg, [-2.5, -2.5], [2.5, 2.5], 5, burn_in=5.0, groups=50)
    # stationary law of the Euler chain: independent normals of variance 2 / (2 - h), restricted to the window
    edges = hist.edges[0]
    p1 = np.diff(stats.norm.cdf(edges, scale=math.sqrt(2.0 / (2.0 - cfg.h))))
    cell = np.outer(p1, p1) / np.sum(p1) ** 2 / (edges[1] - edges[0]) ** 2
    assert hist.density.shape == (5, 5)
    assert np.all(np.abs(hist.density - cell) <= 5.0 * hist.se)
    cell_mass = hist.density.sum() * (edges[1] - edges[0]) ** 2
    assert cell_mass == pytest.approx(1.0, rel=1e-12)


def _cube_occupation(d, t, half=2.0):
    # expected time in [-half, half]^d up to t for Brownian motion from 0
    return integrate.quad(lambda s: math.erf(half / math.sqrt(2.0 * s)) ** d if s > 0 else 1.0, 0.0, t,
                          limit=200)[0]


def _occupation(cf, d, t):
    cfg = SimConfig(x=(0.0,) * d, t=t, h=2e-2, scheme="euler-maruyama", R_kill=1e6, paths=2000, seed=12)
    hist = occupation_histogram(cf, cfg, [-2.0] * d, [2.0] * d, 1, groups=40)
    return hist.occupation_time, hist.window_fraction_se * t


@pytest.mark.parametrize("d", [2, 3])
def test_brownian_window_occupation_matches_oracle(d):
    for t in (10.0, 40.0):
        occ, se = _occupation(_bm(d), d, t)
        assert abs(occ - _cube_occupation(d, t)) <= 5.0 * se + 0.02 * 1.0


def test_occupation_trend_separates_recurrent_from_transient():
    gain = {}
    for d, cf in ((2, instantiate("radial-power", d=2, m=0.0).cf), (3, _bm(3))):
        gain[d] = _occupation(cf, d, 40.0)[0] - _occupation(cf, d, 10.0)[0]
    # recurrence keeps accumulating time (logarithmically in the plane), transience saturates
    assert gain[2] > 2.0 * gain[3] > 0
    assert _cube_occupation(3, 40.0) - _cube_occupation(3, 10.0) < 0.5 * (
        _cube_occupation(2, 40.0) - _cube_occupation(2, 10.0))

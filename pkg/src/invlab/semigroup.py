"""Monte Carlo semigroup estimates and the Ornstein–Uhlenbeck oracle.

``P_t f(x)`` is estimated as the mean of ``f(X_t)`` over an ensemble, with
killed paths contributing zero. Because the estimator only averages values
of ``f`` and zeros, ``|P_t f(x)| <= sup |f|`` and positivity hold exactly for
every estimate, not just in expectation.

The primal estimator takes no density: the semigroup depends only on
``(A, G)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from ._parallel import ordered_map
from .coefficients import (CoefficientField, DensitySpec, ball_points, check_ellipticity,
                           cholesky_batch)
from .quadrature import box_integral
from .sde import BATCH, SimConfig, simulate
from .weak_form import TestFunction

__all__ = [
    "HEURISTIC_LABEL",
    "SemigroupEstimate",
    "CoexcessiveRow",
    "SemigroupInvarianceResult",
    "GrowthProbe",
    "OUSpec",
    "GaussianObservable",
    "QuadraticObservable",
    "estimate_Ptf",
    "estimate_dual_Ptf",
    "coexcessive_check",
    "invariance_under_semigroup_check",
    "potential_growth_probe",
    "ou_semigroup",
    "adaptive_simpson",
]

HEURISTIC_LABEL = "heuristic evidence"


def _values(f, X: np.ndarray) -> np.ndarray:
    if hasattr(f, "value"):
        return np.asarray(f.value(X), dtype=float)
    return np.asarray(f(X), dtype=float)


@dataclass
class SemigroupEstimate:
    value: float
    se: float
    paths: int
    killed_fraction: float
    stalled_fraction: float = 0.0
    x: tuple = ()
    t: float = 0.0
    drift: str = "primal"

    def to_dict(self) -> dict:
        return asdict(self)


def _sim(sim: SimConfig | None, x, t, **kw) -> SimConfig:
    base = sim if sim is not None else SimConfig(x=tuple(np.atleast_1d(x)), t=t)
    return base.replace(x=tuple(float(v) for v in np.atleast_1d(x)), t=float(t), **kw)


def _estimate(ens, f) -> SemigroupEstimate:
    alive = ens.alive
    vals = np.zeros(ens.terminal.shape[0])
    if np.any(alive):
        v = _values(f, ens.terminal[alive])
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("observable is not finite at a terminal state")
        vals[alive] = v
    n = vals.size
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    cfg = ens.config
    return SemigroupEstimate(float(vals.mean()), se, n, ens.n_exited / n, ens.n_stalled / n,
                             cfg.x, cfg.t, cfg.drift)


def estimate_Ptf(cf: CoefficientField, f, x, t: float, sim: SimConfig | None = None, *,
                 workers: int | None = None) -> SemigroupEstimate:
    """``E_x[f(X_t); t < exit]`` from an ensemble of the primal dynamics."""
    ens = simulate(cf, _sim(sim, x, t, drift="primal"), workers=workers)
    return _estimate(ens, f)


def estimate_dual_Ptf(cf: CoefficientField, rho: DensitySpec, f, x, t: float,
                      sim: SimConfig | None = None, *, workers: int | None = None) -> SemigroupEstimate:
    """As :func:`estimate_Ptf` with the dual drift ``2 beta - G`` of ``(A, rho)``."""
    ens = simulate(cf, _sim(sim, x, t, drift="dual"), rho=rho, workers=workers)
    return _estimate(ens, f)


# -- co-excessive identity ----------------------------------------------------------

@dataclass
class CoexcessiveRow:
    x: tuple
    h: float
    estimate: float
    se: float
    z: float
    passed: bool
    killed_fraction: float


def coexcessive_check(cf: CoefficientField, rho: DensitySpec, rho_tilde: DensitySpec,
                      points: Sequence, t: float, sim: SimConfig | None = None,
                      tol_sigma: float = 3.0, *, ratio_cap: float = 1e8, h=None,
                      workers: int | None = None) -> list[CoexcessiveRow]:
    """Check ``T'_t h = h`` for ``h = rho / rho_tilde``, the dual taken w.r.t. ``rho_tilde``.

    Both densities must be infinitesimally invariant; this is not re-checked
    here. ``h`` must be bounded on ``B_{R_kill}``: it is sampled there and a
    ratio above ``ratio_cap`` (or a non-finite one) raises ``ValueError``.
    A closed form of the ratio may be passed as ``h``; it avoids underflow
    where both densities are tiny.
    """
    pts = [tuple(np.atleast_1d(np.asarray(p, dtype=float))) for p in points]
    d = cf.d
    R = (sim.R_kill if sim is not None else SimConfig(x=pts[0], t=t).R_kill)
    probe = ball_points(np.zeros(d), R, 2048, seed=17) if d > 1 else np.linspace(-R, R, 2049)[:, None]

    def ratio(X):
        return rho.value(X) / rho_tilde.value(X)

    closed = h
    hfun = ratio if closed is None else (lambda X: _values(closed, X))
    if closed is not None:
        # the closed form must agree with the ratio where both densities are representable
        near = probe[np.linalg.norm(probe, axis=1) <= 2.0]
        if not np.allclose(hfun(near), ratio(near), rtol=1e-10, atol=0.0):
            raise ValueError("the supplied h does not equal rho / rho_tilde")
    h = hfun

    hv = h(probe)
    if not np.all(np.isfinite(hv)) or np.max(hv) > ratio_cap:
        k = int(np.argmax(np.where(np.isfinite(hv), hv, np.inf)))
        raise ValueError(f"rho/rho_tilde looks unbounded on B_{R:g}: {hv[k]:.3g} at {probe[k]}")
    rows = []

    def one(p):
        est = estimate_dual_Ptf(cf, rho_tilde, h, p, t, sim, workers=1)
        hx = float(h(np.asarray(p, dtype=float)[None, :])[0])
        diff = est.value - hx
        z = diff / est.se if est.se > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))
        return CoexcessiveRow(p, hx, est.value, est.se, float(z), abs(diff) <= tol_sigma * est.se,
                              est.killed_fraction)

    rows = ordered_map(one, pts, workers)
    return rows


# -- invariance of mu under the semigroup ---------------------------------------------

@dataclass
class SemigroupInvarianceResult:
    integral_estimate: float
    reference: float
    difference: float
    se: float
    quad_error: float
    tolerance: float
    passed: bool
    box: list
    nodes: int
    paths_per_node: int
    killed_fraction: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _gl_panels(lo: float, hi: float, panels: int, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def invariance_under_semigroup_check(cf: CoefficientField, rho: DensitySpec, f: TestFunction, t: float,
                                     sim: SimConfig | None = None, *, panels: int = 8,
                                     order: int = 6, paths_per_node: int = 4000,
                                     n_sigma: float = 3.0,
                                     workers: int | None = None) -> SemigroupInvarianceResult:
    """Compare ``int P_t f dmu`` with ``int f dmu``.

    The outer integral uses composite Gauss–Legendre on the support of
    ``f`` inflated by ``6 sqrt(t Lambda) + t sup|G|`` (``Lambda`` the largest
    eigenvalue of ``A`` and the sup taken over the support), with one
    independent ensemble per node. The quadrature error is gauged by
    applying the same rule to ``f rho`` against an adaptive reference.
    The check passes when the difference is within that error plus
    ``n_sigma`` combined standard errors.
    """
    d = cf.d
    if d > 2:
        raise ValueError("the semigroup invariance check is limited to d <= 2")
    base = sim if sim is not None else SimConfig(x=tuple(f.center), t=t)
    center, radius = f.center, f.radius
    ell = check_ellipticity(cf, center, radius, 256)
    sup_g = float(np.max(np.linalg.norm(cf.G(ball_points(center, radius, 512, seed=3)), axis=1)))
    spread = 6.0 * math.sqrt(t * ell.Lambda_max) + t * sup_g
    lo = center - radius - spread
    hi = center + radius + spread
    corner = np.max(np.abs(np.stack([lo, hi])), axis=0)
    if np.linalg.norm(corner) >= base.R_kill:
        raise ValueError(f"inflated box reaches |x| = {np.linalg.norm(corner):.3g}, "
                         f"beyond R_kill = {base.R_kill:g}")
    axes = [_gl_panels(lo[i], hi[i], panels, order) for i in range(d)]
    if d == 1:
        X = axes[0][0][:, None]
        W = axes[0][1]
    else:
        gx, gy = np.meshgrid(axes[0][0], axes[1][0], indexing="ij")
        wx, wy = np.meshgrid(axes[0][1], axes[1][1], indexing="ij")
        X = np.stack([gx.ravel(), gy.ravel()], axis=1)
        W = (wx * wy).ravel()
    rho_x = rho.value(X)
    seeds = [base.seed * 1_000_003 + j + 1 for j in range(X.shape[0])]

    def node(j):
        cfg = base.replace(x=tuple(X[j]), t=float(t), paths=paths_per_node, seed=seeds[j],
                           drift="primal")
        ens = simulate(cf, cfg, workers=1)
        return _estimate(ens, f)

    ests = ordered_map(node, range(X.shape[0]), workers)
    vals = np.array([e.value for e in ests])
    ses = np.array([e.se for e in ests])
    killed = float(np.mean([e.killed_fraction for e in ests]))
    integral = float(np.sum(W * rho_x * vals))
    se = float(math.sqrt(np.sum((W * rho_x * ses) ** 2)))

    def f_rho(P):
        return _values(f, P) * rho.value(P)

    ref = box_integral(f_rho, *f.support_box(), atol=1e-13)
    rule = float(np.sum(W * rho_x * _values(f, X)))
    quad_err = abs(rule - float(ref.value)) + float(ref.error)
    diff = integral - float(ref.value)
    tol = quad_err + n_sigma * se
    return SemigroupInvarianceResult(integral, float(ref.value), diff, se, quad_err, tol,
                                     abs(diff) <= tol, [lo.tolist(), hi.tolist()], X.shape[0],
                                     paths_per_node, killed,
                                     {"Lambda": ell.Lambda_max, "sup_G_support": sup_g,
                                      "rule_on_f_rho": rule})


# -- potential-operator growth ----------------------------------------------------------

@dataclass
class GrowthProbe:
    horizons: list
    values: list
    se: list
    increments: list
    trend: str  # "unbounded-looking" | "saturating" | "zero"
    label: str = HEURISTIC_LABEL

    def to_dict(self) -> dict:
        return asdict(self)


def potential_growth_probe(cf: CoefficientField, f, x, horizons: Sequence[float],
                           sim: SimConfig | None = None, *, shrink_factor: float = 1.5,
                           workers: int | None = None) -> GrowthProbe:
    """Tabulate ``int_0^T P_s f(x) ds`` for increasing ``T`` from one ensemble.

    The time integral is the left-point sum over each path's steps. The
    trend is "saturating" when each successive increment is at least
    ``shrink_factor`` times smaller than the previous one, otherwise
    "unbounded-looking". This is heuristic evidence only.
    """
    T = np.asarray(list(horizons), dtype=float)
    if np.any(np.diff(T) <= 0) or T[0] <= 0:
        raise ValueError("horizons must be positive and increasing")
    cfg = _sim(sim, x, float(T[-1]), drift="primal")
    n_h = T.size

    class Acc:
        def __init__(self, first):
            self.first = first
            self.acc = np.zeros((min(cfg.paths - first, BATCH), n_h))

        def __call__(self, X, t0, dt, idx):
            v = _values(f, X)
            if not np.any(v):
                return
            # portion of [t0, t0 + dt] below each horizon
            w = np.clip(T[None, :] - t0[:, None], 0.0, None)
            w = np.minimum(w, dt[:, None])
            self.acc[idx] += v[:, None] * w

    ens = simulate(cf, cfg, observer_factory=Acc, workers=workers)
    acc = np.vstack([a.acc for a in ens.provenance.pop("observers")])
    n = acc.shape[0]
    vals = acc.mean(axis=0)
    se = acc.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(n_h)
    inc = np.diff(np.concatenate([[0.0], vals]))
    if np.all(vals == 0):
        trend = "zero"
    else:
        later = inc[1:]
        shrinking = bool(np.all(later[1:] * shrink_factor <= later[:-1])) if later.size > 1 else False
        trend = "saturating" if shrinking else "unbounded-looking"
    return GrowthProbe(T.tolist(), vals.tolist(), se.tolist(), inc.tolist(), trend)


# -- Ornstein–Uhlenbeck oracle ------------------------------------------------------------

def adaptive_simpson(fun: Callable[[float], np.ndarray], a: float, b: float, tol: float = 1e-12,
                     max_depth: int = 50) -> np.ndarray:
    """Adaptive Simpson quadrature for array-valued integrands (Richardson-corrected)."""
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = fun(lm), fun(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth >= max_depth or np.max(np.abs(delta)) <= 15.0 * tol:
            return left + right + delta / 15.0
        return (rec(a, m, fa, flm, fm, left, tol / 2.0, depth + 1)
                + rec(m, b, fm, frm, fb, right, tol / 2.0, depth + 1))

    fa, fb, fm = fun(a), fun(b), fun(0.5 * (a + b))
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 0)


@dataclass
class OUSpec:
    """``L = tr(Q Hess) + <Bx, grad>``, i.e. ``A = 2Q`` and ``G(x) = Bx``."""

    Q: np.ndarray
    Bmat: np.ndarray

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.Bmat = np.atleast_2d(np.asarray(self.Bmat, dtype=float))
        if not np.allclose(self.Q, self.Q.T, rtol=0, atol=0):
            raise ValueError("Q must be symmetric")
        cholesky_batch(self.Q[None])
        if self.Bmat.shape != self.Q.shape:
            raise ValueError("Q and B must have the same shape")

    @property
    def d(self) -> int:
        return self.Q.shape[0]

    def coefficients(self) -> CoefficientField:
        B = self.Bmat
        return CoefficientField.constant(2.0 * self.Q, lambda X: X @ B.T, name="ornstein-uhlenbeck")

    def Q_t(self, t: float, tol: float = 1e-12) -> np.ndarray:
        """``int_0^t e^{sB} Q e^{sB^T} ds``, checked positive definite."""
        if t <= 0:
            raise ValueError("t must be positive")

        def integrand(s):
            E = expm(s * self.Bmat)
            return E @ self.Q @ E.T

        Qt = adaptive_simpson(integrand, 0.0, float(t), tol)
        Qt = 0.5 * (Qt + Qt.T)
        cholesky_batch(Qt[None])
        return Qt

    def mean(self, x, t: float) -> np.ndarray:
        return expm(t * self.Bmat) @ np.asarray(x, dtype=float)


@dataclass
class GaussianObservable:
    """``f(y) = exp(-a |y - center|^2)``."""

    a: float = 1.0
    center: np.ndarray | None = None

    def __call__(self, Y):
        Y = np.atleast_2d(Y)
        c = 0.0 if self.center is None else np.asarray(self.center, dtype=float)
        D = Y - c
        return np.exp(-self.a * np.sum(D * D, axis=1))


@dataclass
class QuadraticObservable:
    """``f(y) = y^T M y + <b, y> + c``."""

    M: np.ndarray
    b: np.ndarray | None = None
    c: float = 0.0

    def __call__(self, Y):
        Y = np.atleast_2d(Y)
        M = np.asarray(self.M, dtype=float)
        out = np.einsum("ni,ij,nj->n", Y, M, Y) + self.c
        if self.b is not None:
            out = out + Y @ np.asarray(self.b, dtype=float)
        return out


def ou_semigroup(spec: OUSpec, f, x, t: float, *, hermite_points: int = 40) -> float:
    """``E f(e^{tB} x - Y)`` with ``Y ~ N(0, 2 Q_t)``.

    Gaussian and quadratic observables are integrated in closed form; any
    other callable uses a tensor Gauss–Hermite rule after whitening by the
    Cholesky factor of ``2 Q_t``.
    """
    m = spec.mean(x, t)
    S = 2.0 * spec.Q_t(t)
    d = spec.d
    if isinstance(f, GaussianObservable):
        c = np.zeros(d) if f.center is None else np.asarray(f.center, dtype=float)
        mu = m - c
        K = np.eye(d) + 2.0 * f.a * S
        return float(np.exp(-f.a * mu @ np.linalg.solve(K, mu)) / math.sqrt(np.linalg.det(K)))
    if isinstance(f, QuadraticObservable):
        M = np.asarray(f.M, dtype=float)
        val = m @ M @ m + np.trace(M @ S) + f.c
        if f.b is not None:
            val += np.asarray(f.b, dtype=float) @ m
        return float(val)
    L = cholesky_batch(S[None])[0]
    z, w = np.polynomial.hermite_e.hermegauss(hermite_points)
    w = w / math.sqrt(2.0 * math.pi)
    grids = np.meshgrid(*([z] * d), indexing="ij")
    Z = np.stack([g.ravel() for g in grids], axis=1)
    Wt = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij"), axis=0).reshape(d, -1), axis=0)
    Y = m[None, :] - Z @ L.T
    return float(np.sum(Wt * _values(f, Y)))

"""Explicit classification criteria and the verdict aggregator.

Every check samples an inequality on spheres ``|x| = r`` (or on a ball for
global targets) at quasi-random points and reports the worst margin with a
witness point. Passing is evidence on the sampled points; the aggregator
:func:`classify` then fires only the implications that the underlying
results license, and records the chain.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .coefficients import (CoefficientField, DensitySpec, _dot, _matvec, _tr_AH, ball_points,
                           drift_decomposition)
from .fields import ScalarField
from .quadrature import ball_integral, box_integral, radial_integral

__all__ = [
    "CITATIONS",
    "CriterionResult",
    "LyapunovSpec",
    "VolumeFunction",
    "Verdict",
    "ClassifyOptions",
    "shell_points",
    "log_shells",
    "lyapunov_shell_check",
    "layporec_check",
    "d2_eigen_gap_check",
    "volume_function",
    "recurrence_integral_test",
    "growth_conservativeness_check",
    "an_divergence_check",
    "growth_integrability_check",
    "l1_integrability_check",
    "classify",
]

# Descriptive labels carried by every criterion result and implication.
CITATIONS = {
    "lyapunov": "Lyapunov recurrence criterion: LV <= -c outside a ball, inf of V on spheres -> infinity",
    "lyapunov-finite": "Lyapunov criterion with c > 0 implies a finite infinitesimally invariant measure",
    "log-lyapunov": "logarithmic Lyapunov function V = ln|x| + 2 reduces LV <= -c to a coefficient inequality",
    "eigen-gap": "planar eigenvalue-gap recurrence criterion |Psi1 - Psi2|/2 + <G, x> <= -c|x|^2",
    "volume": "volume growth mu(B_r) of balls about the origin",
    "integral-test": "volume test: int_1^inf r / mu(B_r) dr = infinity gives recurrence for symmetric forms",
    "growth": "conservativeness from the growth bound of the coefficients by M|x|^2 (ln|x| + 1)",
    "an-divergence": "divergence-free perturbation criterion: a_n -> infinity with vanishing log ratio",
    "growth-integrability": "finite measure plus growth bound M|x|^2 ln(|x| + 1) on the perturbation",
    "l1-integrability": "finite measure plus integrable diffusion and perturbation coefficients",
    "nonconservative": "non-conservativeness criterion: bounded positive V with L'V >= alpha V",
    "dichotomy": "irreducibility: the semigroup is either recurrent or transient",
    "recurrence-conservative": "recurrence implies conservativeness of the semigroup and its dual",
    "recurrence-uniqueness": "recurrence implies uniqueness of the infinitesimally invariant measure",
    "recurrence-unique-invariant": "recurrence implies uniqueness of the invariant measure",
    "finite-conservative": "finite measure with a conservative semigroup (or dual) implies recurrence",
    "duality": "mu is invariant iff the dual semigroup is conservative (and vice versa)",
    "symmetric-finite": "a finite symmetrizing measure is invariant for the symmetric semigroup",
    "symmetric-self-dual": "with zero perturbation the semigroup coincides with its dual",
}


@dataclass
class CriterionResult:
    name: str
    verdict: str  # pass | fail | inconclusive | unsupported
    citation: str
    evidence: dict = field(default_factory=dict)
    heuristic: bool = False

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {"name": self.name, "verdict": self.verdict, "citation": self.citation,
                "heuristic": self.heuristic, "evidence": _plain(self.evidence)}


def _plain(obj):
    """Convert numpy containers and scalars to JSON-friendly Python objects."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# -- sampling -------------------------------------------------------------------

def shell_points(d: int, r: float, n: int, seed: int = 0) -> np.ndarray:
    """Quasi-random points on the sphere of radius ``r`` (both points when ``d = 1``)."""
    if d == 1:
        return np.array([[-r], [r]])
    u = qmc.Halton(d=d, scramble=True, seed=seed).random(n)
    z = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return r * z


def log_shells(N0: float, R_max: float, count: int = 8) -> np.ndarray:
    """``count`` log-spaced radii in ``(N0, R_max]``."""
    if R_max <= N0:
        raise ValueError("R_max must exceed N0")
    lo = N0 if N0 > 0 else R_max / 2.0 ** (count - 1)
    r = np.geomspace(lo, R_max, count + (1 if N0 > 0 else 0))
    return r[1:] if N0 > 0 else r


def _shell_cloud(d: int, shells, samples: int, seed: int, include_ball: float | None = None):
    shells = np.asarray(list(shells), dtype=float)
    if shells.size == 0:
        raise ValueError("empty shell set")
    pts = [shell_points(d, r, samples, seed + k) for k, r in enumerate(shells)]
    tags = [np.full(p.shape[0], k) for k, p in enumerate(pts)]
    if include_ball is not None:
        b = ball_points(np.zeros(d), include_ball, samples, seed + 1000)
        pts.append(b)
        tags.append(np.full(b.shape[0], -1))
    return shells, np.vstack(pts), np.concatenate(tags)


def _slack(*terms: np.ndarray) -> np.ndarray:
    """Round-off allowance for a sum of terms evaluated in double precision."""
    return 64.0 * np.finfo(float).eps * np.sum([np.abs(t) for t in terms], axis=0)


# -- Lyapunov-type checks -----------------------------------------------------------

@dataclass
class LyapunovSpec:
    """A Lyapunov function and the inequality it is meant to satisfy.

    ``target`` is one of

    * ``"recurrence"``: ``LV <= -c`` outside ``B_N0`` with ``c >= 0``;
    * ``"finite-measure"``: the same with ``c > 0``;
    * ``"nonconservative-dual"``: ``L'V >= alpha V`` everywhere, ``V`` bounded and positive;
    * ``"nonconservative-primal"``: ``LV >= alpha V`` everywhere, same conditions.
    """

    V: ScalarField
    N0: float = 1.0
    target: str = "recurrence"
    c: float = 0.0
    alpha: float = 0.0
    check_growth: bool = True
    name: str = "V"

    def __post_init__(self):
        if self.target not in ("recurrence", "finite-measure", "nonconservative-dual",
                               "nonconservative-primal"):
            raise ValueError(f"unknown Lyapunov target {self.target!r}")
        if self.target == "finite-measure" and not self.c > 0:
            raise ValueError("the finite-measure target needs c > 0")
        if self.target.startswith("nonconservative") and not self.alpha > 0:
            raise ValueError("non-conservativeness targets need alpha > 0")

    @property
    def is_global(self) -> bool:
        return self.target.startswith("nonconservative")


def lyapunov_shell_check(cf: CoefficientField, spec: LyapunovSpec, shells: Sequence[float],
                         samples_per_shell: int = 256, *, rho: DensitySpec | None = None,
                         seed: int = 0) -> CriterionResult:
    """Sample the Lyapunov inequality of ``spec`` on the given spheres.

    For recurrence targets the margin is ``max(LV + c)`` (want ``<= 0``); for
    non-conservativeness targets it is ``min(L V - alpha V)`` with ``L`` the
    dual or primal operator (want ``>= 0``), sampled on the spheres and on the
    ball they enclose, since those inequalities are required everywhere.
    """
    d = cf.d
    R = max(shells) if len(shells) else 0.0
    shells, X, tag = _shell_cloud(d, shells, samples_per_shell, seed,
                                  include_ball=R if spec.is_global else None)
    V = spec.V.value(X)
    if not np.all(np.isfinite(V)) or np.any(V <= 0):
        k = int(np.argmax(~(V > 0) | ~np.isfinite(V)))
        return CriterionResult(f"lyapunov[{spec.name}]", "fail", CITATIONS["lyapunov"],
                               {"reason": "V is not strictly positive", "witness": X[k]})
    if spec.target == "nonconservative-dual":
        if rho is None:
            raise ValueError("the dual target needs the density")
        drift = drift_decomposition(cf, rho).dual_drift(X)
    else:
        drift = cf.G(X)
    A, H, gV = cf.A(X), spec.V.hessian(X), spec.V.gradient(X)
    LV = 0.5 * _tr_AH(A, H) + _dot(drift, gV)
    # magnitudes of the terms, so the round-off allowance sees cancellation inside LV and inside H
    diffusion_part = 0.5 * np.sum(np.abs(A), axis=(1, 2)) * np.max(np.abs(H), axis=(1, 2))
    drift_part = _dot(np.abs(drift), np.abs(gV))
    if not np.all(np.isfinite(LV)):
        return CriterionResult(f"lyapunov[{spec.name}]", "fail", CITATIONS["lyapunov"],
                               {"reason": "non-finite LV on samples"})
    per_shell = []
    if spec.is_global:
        g = LV - spec.alpha * V
        slack = _slack(diffusion_part, drift_part, spec.alpha * V)
        ok = g >= -slack
        k = int(np.argmin(g))
        for j in range(len(shells)):
            per_shell.append(float(np.min(g[tag == j])))
        cit = CITATIONS["nonconservative"]
        evidence = {"min_margin": float(g[k]), "witness": X[k], "per_shell_min": per_shell,
                    "alpha": spec.alpha, "V_sup_sampled": float(np.max(V)),
                    "ball_radius": float(R), "operator": "dual" if "dual" in spec.target else "primal"}
    else:
        g = LV + spec.c
        slack = _slack(diffusion_part, drift_part, np.full_like(LV, spec.c))
        ok = g <= slack
        k = int(np.argmax(g))
        for j in range(len(shells)):
            per_shell.append(float(np.max(LV[tag == j])))
        cit = CITATIONS["lyapunov-finite" if spec.c > 0 else "lyapunov"]
        evidence = {"sup_LV_per_shell": per_shell, "max_margin": float(g[k]), "witness": X[k],
                    "c": spec.c, "N0": spec.N0}
        if spec.check_growth:
            inf_v = [float(np.min(V[tag == j])) for j in range(len(shells))]
            growing = bool(np.all(np.diff(inf_v) > 0))
            evidence["inf_V_per_shell"] = inf_v
            evidence["growth_ok"] = growing
            ok = ok & growing
    return CriterionResult(f"lyapunov[{spec.name}]", "pass" if np.all(ok) else "fail", cit, evidence)


def _log_lyapunov_lhs(cf: CoefficientField, X: np.ndarray):
    A = cf.A(X)
    G = cf.G(X)
    r2 = np.sum(X * X, axis=1)
    t1 = -_dot(_matvec(A, X), X) / r2
    t2 = 0.5 * np.trace(A, axis1=1, axis2=2)
    t3 = _dot(G, X)
    return t1, t2, t3, r2


def layporec_check(cf: CoefficientField, N0: float, c: float, shells: Sequence[float],
                   samples: int = 256, seed: int = 0) -> CriterionResult:
    """``-<Ax,x>/|x|^2 + tr(A)/2 + <G,x> <= -c|x|^2`` on the spheres.

    This is ``LV <= -c`` for ``V = ln(|x| v N0) + 2``, which grows to infinity,
    so passing licenses the recurrence conclusion.
    """
    if c < 0:
        raise ValueError("c must be >= 0")
    shells, X, tag = _shell_cloud(cf.d, [s for s in shells if s > N0], samples, seed)
    t1, t2, t3, r2 = _log_lyapunov_lhs(cf, X)
    lhs = t1 + t2 + t3
    g = lhs + c * r2
    ok = g <= _slack(t1, t2, t3, c * r2)
    k = int(np.argmax(g))
    per_shell = [float(np.max(lhs[tag == j])) for j in range(len(shells))]
    return CriterionResult("log-lyapunov", "pass" if np.all(ok) else "fail",
                           CITATIONS["log-lyapunov"] if c == 0 else CITATIONS["lyapunov-finite"],
                           {"c": c, "N0": N0, "sup_lhs_per_shell": per_shell,
                            "max_margin": float(g[k]), "witness": X[k], "shells": shells})


def d2_eigen_gap_check(Psi1: Callable | None, Psi2: Callable | None, cf: CoefficientField,
                       c: float, N0: float, shells: Sequence[float], samples: int = 256,
                       seed: int = 0, eig_rtol: float = 1e-8) -> CriterionResult:
    """Planar criterion ``|Psi1 - Psi2|/2 + <G,x> <= -c|x|^2`` outside ``B_N0``.

    ``Psi1`` and ``Psi2`` are the eigenvalue fields of ``A``. When both are
    ``None`` they are computed from ``A``; when supplied they are checked
    against the eigenvalues of ``A`` at every sample.
    """
    if cf.d != 2:
        raise ValueError("the eigenvalue-gap criterion needs d = 2")
    shells, X, tag = _shell_cloud(2, [s for s in shells if s > N0], samples, seed)
    ev = np.linalg.eigvalsh(cf.A(X))
    if Psi1 is None and Psi2 is None:
        p1, p2 = ev[:, 1], ev[:, 0]
    else:
        p1 = np.asarray(Psi1(X), dtype=float)
        p2 = np.asarray(Psi2(X), dtype=float)
        if np.any(p1 <= 0) or np.any(p2 <= 0):
            raise ValueError("Psi1 and Psi2 must be positive")
        pair = np.sort(np.stack([p1, p2], axis=1), axis=1)
        if not np.allclose(pair, ev, rtol=eig_rtol, atol=0.0):
            k = int(np.argmax(np.max(np.abs(pair - ev), axis=1)))
            raise ValueError(f"Psi1, Psi2 are not the eigenvalues of A at x = {X[k]}")
    gap = 0.5 * np.abs(p1 - p2)
    drift = _dot(cf.G(X), X)
    r2 = np.sum(X * X, axis=1)
    g = gap + drift + c * r2
    ok = g <= _slack(gap, drift, c * r2)
    k = int(np.argmax(g))
    return CriterionResult("eigen-gap", "pass" if np.all(ok) else "fail", CITATIONS["eigen-gap"],
                           {"c": c, "N0": N0, "max_margin": float(g[k]), "witness": X[k],
                            "sup_lhs_per_shell": [float(np.max((gap + drift)[tag == j]))
                                                  for j in range(len(shells))]})


def growth_conservativeness_check(cf: CoefficientField, M: float, N0: float,
                                  shells: Sequence[float], samples: int = 256,
                                  seed: int = 0) -> CriterionResult:
    """``-<Ax,x>/|x|^2 + tr(A)/2 + <G,x> <= M|x|^2 (ln|x| + 1)`` on the spheres."""
    shells, X, tag = _shell_cloud(cf.d, [s for s in shells if s > N0], samples, seed)
    with np.errstate(over="ignore", invalid="ignore"):
        t1, t2, t3, r2 = _log_lyapunov_lhs(cf, X)
        lhs = t1 + t2 + t3
        bound = M * r2 * (0.5 * np.log(r2) + 1.0)
        g = lhs - bound
    finite = np.isfinite(g)
    ok = finite & (g <= _slack(t1, t2, t3, bound))
    k = int(np.argmax(np.where(finite, g, np.inf)))
    return CriterionResult("growth-conservativeness", "pass" if np.all(ok) else "fail",
                           CITATIONS["growth"],
                           {"M": M, "N0": N0, "max_margin": float(g[k]) if finite[k] else math.inf,
                            "witness": X[k], "shells": shells,
                            "non_finite_samples": int(np.sum(~finite))})


# -- volume growth ------------------------------------------------------------------

@dataclass
class VolumeFunction:
    r: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    method: str
    d: int

    def __post_init__(self):
        if np.any(self.values <= 0):
            raise ValueError("ball measures must be positive")
        if np.any(np.diff(self.values) < -np.maximum(self.errors[1:], 0) * 2 - 1e-14 * self.values[1:]):
            raise ValueError("ball measures must be nondecreasing in r")

    def to_dict(self) -> dict:
        return {"method": self.method, "d": self.d, "r": self.r.tolist(),
                "values": self.values.tolist(), "errors": self.errors.tolist()}


def volume_function(rho: DensitySpec, d: int, r_grid: Sequence[float], method: str = "auto", *,
                    proposal: tuple[Callable, Callable] | None = None, n_samples: int = 100_000,
                    seed: int = 0, variance_cap: float = 1e-2) -> VolumeFunction:
    """``r -> mu(B_r)`` on a grid.

    ``method``: ``"radial-closed-form"`` uses ``rho.ball_measure``;
    ``"radial-quadrature"`` integrates ``|S^{d-1}| rho(s) s^{d-1}`` shell by
    shell, splitting at the density's kinks; ``"monte-carlo"`` is importance
    sampling with ``proposal = (sampler(rng, n) -> (n, d), pdf(X) -> (n,))``;
    ``"auto"`` picks the first available. Errors are reported per radius.
    """
    r = np.asarray(list(r_grid), dtype=float)
    if np.any(np.diff(r) <= 0) or r[0] <= 0:
        raise ValueError("r_grid must be positive and increasing")
    if method == "auto":
        method = ("radial-closed-form" if rho.ball_measure is not None else
                  "radial-quadrature" if rho.is_radial else "monte-carlo")
    if method == "radial-closed-form":
        if rho.ball_measure is None:
            raise ValueError("no closed-form ball measure registered for this density")
        vals = np.array([rho.ball_measure(float(s)) for s in r])
        errs = np.zeros_like(vals)
    elif method == "radial-quadrature":
        if not rho.is_radial:
            raise ValueError("radial quadrature needs a radial density")
        vals, errs = np.empty_like(r), np.empty_like(r)
        acc, eacc, prev = 0.0, 0.0, 0.0
        for k, s in enumerate(r):
            res = radial_integral(rho.radial_profile, d, float(s), inner_radius=prev,
                                  kink_radii=rho.kink_radii)
            acc += res.value
            eacc += res.error
            vals[k], errs[k] = acc, eacc
            prev = float(s)
    elif method == "monte-carlo":
        if proposal is None:
            raise ValueError("monte-carlo volumes need an importance proposal")
        sampler, pdf = proposal
        rng = np.random.default_rng(seed)
        Y = np.asarray(sampler(rng, n_samples), dtype=float)
        w = rho.value(Y) / np.asarray(pdf(Y), dtype=float)
        norms = np.linalg.norm(Y, axis=1)
        vals, errs = np.empty_like(r), np.empty_like(r)
        for k, s in enumerate(r):
            z = np.where(norms <= s, w, 0.0)
            vals[k] = z.mean()
            errs[k] = z.std(ddof=1) / math.sqrt(n_samples)
            if vals[k] > 0 and errs[k] / vals[k] > variance_cap:
                raise ValueError(f"Monte Carlo relative error {errs[k] / vals[k]:.3g} at r={s} "
                                 f"exceeds the cap {variance_cap}")
    else:
        raise ValueError(f"unknown volume method {method!r}")
    return VolumeFunction(r, vals, errs, method, d)


def recurrence_integral_test(vol: VolumeFunction, margin: float = 0.1,
                             max_fit_residual: float = 0.05) -> CriterionResult:
    """Heuristic decision of ``int_1^inf r / mu(B_r) dr = infinity`` from a tabulated volume.

    The exponent ``kappa`` of ``mu(B_r) ~ r^kappa`` is fitted on the top decade.
    ``kappa < 2 - margin`` means divergent, ``kappa > 2 + margin`` convergent.
    In between, the model ``mu ~ C r^2 (ln r)^p`` is fitted and the integral
    diverges iff ``p <= 1`` (decided with the same margin).
    """
    cit = CITATIONS["integral-test"]
    r, v = vol.r, vol.values
    ev = {"method": vol.method}
    if r[-1] < 1e3:
        return CriterionResult("integral-test", "inconclusive", cit,
                               {**ev, "reason": "needs R_max >= 1e3"}, heuristic=True)
    rel = vol.errors / v
    if np.any(rel[r >= 1] > 1e-3):
        return CriterionResult("integral-test", "inconclusive", cit,
                               {**ev, "reason": "relative volume errors exceed 1e-3"}, heuristic=True)
    top = r >= r[-1] / 10.0
    if np.count_nonzero(top) < 3:
        return CriterionResult("integral-test", "inconclusive", cit,
                               {**ev, "reason": "fewer than 3 grid points in the top decade"},
                               heuristic=True)
    lr, lv = np.log(r[top]), np.log(v[top])
    kappa, b = np.polyfit(lr, lv, 1)
    resid = float(np.max(np.abs(lv - (kappa * lr + b))))
    ev.update({"kappa": float(kappa), "fit_residual": resid, "margin": margin})
    # partial integral on the grid (trapezoid in r) for the report
    m = r >= 1.0
    ev["partial_integral"] = float(np.trapezoid(r[m] / v[m], r[m])) if np.count_nonzero(m) > 1 else 0.0
    if resid > max_fit_residual:
        return CriterionResult("integral-test", "inconclusive", cit,
                               {**ev, "reason": "power-law fit residual too large"}, heuristic=True)
    if kappa < 2.0 - margin:
        return CriterionResult("integral-test", "divergent", cit, ev, heuristic=True)
    if kappa > 2.0 + margin:
        return CriterionResult("integral-test", "convergent", cit, ev, heuristic=True)
    # dead zone: test for a logarithmic factor at exponent 2
    y = lv - 2.0 * lr
    x = np.log(lr)
    p, _ = np.polyfit(x, y, 1)
    ev["log_power"] = float(p)
    if p <= 1.0 - margin:
        verdict = "divergent"
    elif p > 1.0 + margin:
        verdict = "convergent"
    else:
        verdict = "inconclusive"
    return CriterionResult("integral-test", verdict, cit, ev, heuristic=True)


# -- perturbation criteria ----------------------------------------------------------

def _perturbation(cf: CoefficientField, rho: DensitySpec, b_field):
    if b_field is not None:
        return b_field
    return drift_decomposition(cf, rho).perturbation


def _inner_integrand(cf, rho, B, which: str):
    def g(X):
        r2 = np.sum(X * X, axis=1)
        safe = np.where(r2 > 0, r2, 1.0)
        w = rho.value(X)
        bx = np.abs(_dot(np.asarray(B(X), dtype=float), X))
        if which == "B":
            return bx * w
        ax = np.where(r2 > 0, _dot(_matvec(cf.A(X), X), X) / safe, 0.0)
        return np.stack([(ax + bx) * w, bx * w], axis=1)
    return g


def an_divergence_check(cf: CoefficientField, rho: DensitySpec, b_field=None,
                        n_grid: Sequence[float] = tuple(2.0 ** k for k in range(1, 9)), *,
                        slope_margin: float = 0.1, ratio_target: float = 0.1,
                        rtol: float = 1e-8) -> CriterionResult:
    """Tabulate ``a_n`` and ``ln(int_{B_n} |<B,x>| dmu v 1) / a_n`` on ``n_grid``.

    ``a_n = int_1^n r (int_{B_r} (<Ax,x>/|x|^2 + |<B,x>|) dmu)^{-1} dr``. The
    inner integrals are accumulated shell by shell in hyperspherical
    coordinates; the outer integral uses 5-point Gauss–Legendre on each
    ``[n_k, n_{k+1}]``. ``a_n`` is judged divergent when the increments over
    successive grid intervals do not decay geometrically: ``log2`` of the
    increments, fitted against the interval index, has slope
    ``> -slope_margin``. The ratio must end below ``ratio_target`` and be
    non-increasing over the last half of the grid. Both decisions are
    heuristic.
    """
    B = _perturbation(cf, rho, b_field)
    n = np.asarray(list(n_grid), dtype=float)
    if n[0] <= 1 or np.any(np.diff(n) <= 0):
        raise ValueError("n_grid must be increasing and > 1")
    edges = np.concatenate([[1.0], n])
    x5, w5 = np.polynomial.legendre.leggauss(5)
    nodes, weights, owner = [], [], []
    for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        nodes.extend(0.5 * (b - a) * x5 + 0.5 * (a + b))
        weights.extend(0.5 * (b - a) * w5)
        owner.extend([k] * 5)
    nodes, weights, owner = np.array(nodes), np.array(weights), np.array(owner)
    radii = np.unique(np.concatenate([nodes, n]))
    g = _inner_integrand(cf, rho, B, "both")
    kinks = tuple(sorted(set(rho.kink_radii) | set(cf.kink_radii)))
    # mass of B_1 first, then each shell
    with np.errstate(over="ignore", invalid="ignore"):
        prev = ball_integral(g, cf.d, 1.0, kink_radii=kinks, atol=0.0, rtol=rtol)
        I = np.atleast_1d(prev.value).astype(float).copy()
        cum, last = {}, 1.0
        for s in radii:
            res = ball_integral(g, cf.d, float(s), inner_radius=last, kink_radii=kinks,
                                atol=0.0, rtol=rtol)
            I = I + np.atleast_1d(res.value)
            cum[float(s)] = I.copy()
            last = float(s)
    inner = np.array([cum[float(s)][0] for s in nodes])
    J = np.array([cum[float(s)][1] for s in n])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        incr = np.bincount(owner, weights=weights * nodes / inner, minlength=len(n))
        a_n = np.cumsum(incr)
        ratio = np.log(np.maximum(J, 1.0)) / a_n
    ev = {"n": n, "a_n": a_n, "increments": incr, "ratio": ratio, "inner_integral": inner,
          "slope_margin": slope_margin, "ratio_target": ratio_target}
    cit = CITATIONS["an-divergence"]
    if not (np.all(np.isfinite(a_n)) and np.all(np.isfinite(ratio))):
        return CriterionResult("an-divergence", "fail", cit,
                               {**ev, "reason": "non-finite a_n or ratio (overflow)"}, heuristic=True)
    pos = incr > 0
    if np.count_nonzero(pos) < 3:
        return CriterionResult("an-divergence", "inconclusive", cit,
                               {**ev, "reason": "too few positive increments"}, heuristic=True)
    idx = np.arange(len(n))[pos]
    # increments per dyadic doubling of n, so the slope is measured per log2(n)
    slope = float(np.polyfit(np.log2(n[pos]), np.log2(incr[pos]), 1)[0])
    diverges = slope > -slope_margin
    half = ratio[len(ratio) // 2:]
    vanishes = bool(ratio[-1] < ratio_target and np.all(np.diff(half) <= 1e-12 + 1e-9 * np.abs(half[:-1])))
    ev.update({"increment_slope": slope, "a_n_divergent": bool(diverges), "ratio_vanishing": vanishes})
    del idx
    return CriterionResult("an-divergence", "pass" if diverges and vanishes else "fail", cit, ev,
                           heuristic=True)


def growth_integrability_check(cf: CoefficientField, rho: DensitySpec, M: float, N0: float,
                               shells: Sequence[float], samples: int = 256, *, b_field=None,
                               finite: bool | None = None, seed: int = 0) -> CriterionResult:
    """Finite ``mu`` and ``<Ax,x>/|x|^2 + |<B,x>| <= M|x|^2 ln(|x| + 1)`` outside ``B_N0``."""
    cit = CITATIONS["growth-integrability"]
    fin = finite if finite is not None else (rho.finiteness == "finite")
    if not fin:
        return CriterionResult("growth-integrability", "unsupported" if finite is None and
                               rho.finiteness == "unknown" else "fail", cit,
                               {"reason": "measure not known to be finite"})
    B = _perturbation(cf, rho, b_field)
    shells, X, tag = _shell_cloud(cf.d, [s for s in shells if s > N0], samples, seed)
    with np.errstate(over="ignore", invalid="ignore"):
        r2 = np.sum(X * X, axis=1)
        ax = _dot(_matvec(cf.A(X), X), X) / r2
        bx = np.abs(_dot(np.asarray(B(X), dtype=float), X))
        bound = M * r2 * np.log(np.sqrt(r2) + 1.0)
        g = ax + bx - bound
    finite_g = np.isfinite(g)
    ok = finite_g & (g <= _slack(ax, bx, bound))
    k = int(np.argmax(np.where(finite_g, g, np.inf)))
    return CriterionResult("growth-integrability", "pass" if np.all(ok) else "fail", cit,
                           {"M": M, "N0": N0, "witness": X[k],
                            "max_margin": float(g[k]) if finite_g[k] else math.inf})


def l1_integrability_check(cf: CoefficientField, rho: DensitySpec, *, b_field=None,
                           radii: Sequence[float] = (2.0, 4.0, 8.0, 16.0),
                           tail_rtol: float = 1e-6, finite: bool | None = None) -> CriterionResult:
    """Finite ``mu`` and ``a_ij, B in L^1(mu)``, for radial densities only.

    The integrals ``int_{B_R} |a_ij| dmu`` and ``int_{B_R} |B| dmu`` are
    accumulated over growing balls; integrability is accepted when the last
    shell adds less than ``tail_rtol`` relative to the total.
    """
    cit = CITATIONS["l1-integrability"]
    if not rho.is_radial:
        return CriterionResult("l1-integrability", "unsupported", cit,
                               {"reason": "only radial densities are supported"})
    fin = finite if finite is not None else (rho.finiteness == "finite")
    if not fin:
        return CriterionResult("l1-integrability", "fail", cit,
                               {"reason": "measure not known to be finite"})
    B = _perturbation(cf, rho, b_field)
    d = cf.d

    def g(X):
        A = np.abs(cf.A(X)).reshape(X.shape[0], -1)
        b = np.linalg.norm(np.asarray(B(X), dtype=float), axis=1)[:, None]
        return np.hstack([A, b]) * rho.value(X)[:, None]

    totals, last = None, 0.0
    shells = []
    kinks = tuple(sorted(set(rho.kink_radii) | set(cf.kink_radii)))
    with np.errstate(over="ignore", invalid="ignore"):
        for R in radii:
            res = ball_integral(g, d, float(R), inner_radius=last, kink_radii=kinks,
                                atol=0.0, rtol=1e-8)
            v = np.atleast_1d(res.value)
            totals = v if totals is None else totals + v
            shells.append(v)
            last = float(R)
    tail = np.abs(shells[-1]) / np.maximum(np.abs(totals), 1e-300)
    ok = bool(np.all(np.isfinite(totals)) and np.all(tail < tail_rtol))
    return CriterionResult("l1-integrability", "pass" if ok else "fail", cit,
                           {"radii": list(radii), "totals": totals, "last_shell_fraction": tail})


# -- aggregation ----------------------------------------------------------------------

@dataclass
class Verdict:
    recurrence: str = "unknown"  # recurrent | transient | unknown | inconsistent
    conservative_primal: bool | None = None
    conservative_dual: bool | None = None
    measure: str = "unknown"  # finite | infinite | unknown
    mu_invariant: bool | None = None
    mu_dual_invariant: bool | None = None
    unique_infinitesimally_invariant: bool | None = None
    unique_invariant: bool | None = None
    symmetric: bool | None = None
    implications: list[dict] = field(default_factory=list)
    evidence: list[dict] = field(default_factory=list)
    inconsistencies: list[dict] = field(default_factory=list)
    outside_scope: bool = False
    label: str = "numerical evidence on sampled points"

    @property
    def recurrent(self) -> bool:
        return self.recurrence == "recurrent"

    @property
    def transient(self) -> bool:
        return self.recurrence == "transient"

    def to_dict(self) -> dict:
        return _plain(asdict(self))


@dataclass
class ClassifyOptions:
    """Which criteria :func:`classify` runs and with what parameters.

    ``other_measures`` registers further infinitesimally invariant densities
    (for example from the gallery); each must be non-proportional to ``rho``.
    With ``verify_measures`` their invariance is re-checked on the default
    battery before they are used.
    """

    lyapunov: list[LyapunovSpec] = field(default_factory=list)
    layporec: dict | None = None  # {"c": .., "N0": ..}
    eigen_gap: dict | None = None  # {"c": .., "N0": .., "Psi1": .., "Psi2": ..}
    integral_test: dict | None = None  # {"r_max": .., "points": .., "method": ..}
    growth: dict | None = None  # {"M": .., "N0": ..}
    dual_growth: dict | None = None
    an_divergence: dict | None = None
    growth_integrability: dict | None = None
    l1_integrability: dict | None = None
    other_measures: list[DensitySpec] = field(default_factory=list)
    verify_measures: bool = False
    finite: bool | None = None
    symmetric: bool | None = None
    shells: int = 8
    samples: int = 256
    R_max: float = 1e2
    seed: int = 0


def _detect_symmetric(cf: CoefficientField, rho: DensitySpec, R: float, n: int = 128,
                      seed: int = 0) -> tuple[bool, float]:
    X = ball_points(np.zeros(cf.d), R, n, seed + 7)
    # keep away from the non-smooth spheres
    ks = np.array(tuple(rho.kink_radii) + tuple(cf.kink_radii))
    if ks.size:
        rn = np.linalg.norm(X, axis=1)
        X = X[np.min(np.abs(rn[:, None] - ks[None, :]), axis=1) > 1e-3]
    dec = drift_decomposition(cf, rho)
    with np.errstate(over="ignore", invalid="ignore"):
        Bv = dec.perturbation(X)
        G = cf.G(X)
    scale = 1.0 + np.linalg.norm(G, axis=1)
    worst = float(np.max(np.linalg.norm(Bv, axis=1) / scale))
    return bool(np.isfinite(worst) and worst <= 1e-6), worst


def _proportional(rho1: DensitySpec, rho2: DensitySpec, d: int, seed: int = 0) -> bool:
    X = ball_points(np.zeros(d), 2.0, 64, seed + 11)
    q = rho1.value(X) / rho2.value(X)
    return bool(np.max(q) - np.min(q) <= 1e-9 * np.max(np.abs(q)))


class _Facts:
    """Boolean facts with provenance; contradicting assignments are recorded."""

    def __init__(self):
        self.values: dict[str, bool] = {}
        self.implications: list[dict] = []
        self.conflicts: list[dict] = []
        self.why: dict[str, str] = {}

    def get(self, key):
        return self.values.get(key)

    def set(self, key: str, value: bool, rule: str, because: list[str]) -> bool:
        old = self.values.get(key)
        if old is None:
            self.values[key] = value
            self.why[key] = rule
            self.implications.append({"conclusion": f"{key} = {value}", "rule": rule,
                                      "because": because,
                                      "citation": CITATIONS.get(rule, rule)})
            return True
        if old != value:
            conflict = {"fact": key, "held": old, "held_by": self.why[key],
                        "contradicted_by": rule, "because": because}
            if conflict not in self.conflicts:
                self.conflicts.append(conflict)
        return False


def classify(cf: CoefficientField, rho: DensitySpec, options: ClassifyOptions | None = None) -> Verdict:
    """Run the enabled criteria and fold their results into a :class:`Verdict`.

    Failing criteria are never taken as disproof. "Transient" is concluded only
    through the recurrent/transient dichotomy once recurrence is excluded by
    a registered second invariant measure, by certified non-conservativeness
    of either semigroup, or by a convergent volume test in the symmetric case.
    """
    opt = options or ClassifyOptions()
    d = cf.d
    shells = log_shells(1.0, opt.R_max, opt.shells)
    results: list[CriterionResult] = []

    sym = opt.symmetric
    sym_worst = None
    if sym is None:
        sym, sym_worst = _detect_symmetric(cf, rho, min(opt.R_max, 10.0), seed=opt.seed)

    def run(res: CriterionResult):
        results.append(res)
        return res

    rec_sources, ncons_p, ncons_d = [], [], []
    finite_sources = []
    for spec in opt.lyapunov:
        sh = log_shells(spec.N0, opt.R_max, opt.shells) if spec.N0 > 0 else shells
        res = run(lyapunov_shell_check(cf, spec, sh, opt.samples, rho=rho, seed=opt.seed))
        if res.passed:
            if spec.target in ("recurrence", "finite-measure"):
                rec_sources.append(res.name)
                if spec.c > 0:
                    finite_sources.append(res.name)
            elif spec.target == "nonconservative-dual":
                ncons_d.append(res.name)
            else:
                ncons_p.append(res.name)
    if opt.layporec is not None:
        c = float(opt.layporec.get("c", 0.0))
        N0 = float(opt.layporec.get("N0", 1.0))
        res = run(layporec_check(cf, N0, c, log_shells(N0, opt.R_max, opt.shells), opt.samples,
                                 opt.seed))
        if res.passed:
            rec_sources.append(res.name)
            if c > 0:
                finite_sources.append(res.name)
    if opt.eigen_gap is not None and d == 2:
        e = opt.eigen_gap
        N0 = float(e.get("N0", 1.0))
        res = run(d2_eigen_gap_check(e.get("Psi1"), e.get("Psi2"), cf, float(e.get("c", 0.0)), N0,
                                     log_shells(N0, opt.R_max, opt.shells), opt.samples, opt.seed))
        if res.passed:
            rec_sources.append(res.name)
            if float(e.get("c", 0.0)) > 0:
                finite_sources.append(res.name)
    integral = None
    if opt.integral_test is not None:
        it = opt.integral_test
        grid = np.geomspace(1.0, float(it.get("r_max", 1e4)), int(it.get("points", 41)))
        vol = volume_function(rho, d, grid, it.get("method", "auto"))
        integral = run(recurrence_integral_test(vol, float(it.get("margin", 0.1))))
    cons_p_sources, cons_d_sources = [], []
    if opt.growth is not None:
        g = opt.growth
        N0 = float(g.get("N0", 1.0))
        res = run(growth_conservativeness_check(cf, float(g.get("M", 1.0)), N0,
                                                log_shells(N0, opt.R_max, opt.shells),
                                                opt.samples, opt.seed))
        if res.passed:
            cons_p_sources.append(res.name)
    if opt.dual_growth is not None:
        g = opt.dual_growth
        N0 = float(g.get("N0", 1.0))
        dual_cf = cf.with_drift(drift_decomposition(cf, rho).dual_drift, name=f"{cf.name} (dual)")
        res = run(growth_conservativeness_check(dual_cf, float(g.get("M", 1.0)), N0,
                                                log_shells(N0, opt.R_max, opt.shells),
                                                opt.samples, opt.seed))
        res.name = "growth-conservativeness[dual]"
        if res.passed:
            cons_d_sources.append(res.name)

    finite_hint = opt.finite if opt.finite is not None else (
        True if rho.finiteness == "finite" else False if rho.finiteness == "infinite" else None)
    if opt.an_divergence is not None:
        a = opt.an_divergence
        res = run(an_divergence_check(cf, rho, a.get("b_field"),
                                      a.get("n_grid", tuple(2.0 ** k for k in range(1, 9)))))
        if res.passed:
            rec_sources.append(res.name)
    if opt.growth_integrability is not None:
        g = opt.growth_integrability
        N0 = float(g.get("N0", 1.0))
        res = run(growth_integrability_check(cf, rho, float(g.get("M", 1.0)), N0,
                                             log_shells(N0, opt.R_max, opt.shells), opt.samples,
                                             finite=finite_hint, seed=opt.seed))
        if res.passed:
            rec_sources.append(res.name)
    if opt.l1_integrability is not None:
        res = run(l1_integrability_check(cf, rho, finite=finite_hint))
        if res.passed:
            rec_sources.append(res.name)

    others = []
    for k, other in enumerate(opt.other_measures):
        name = f"other-measure[{other.name}]"
        if _proportional(rho, other, d, opt.seed):
            results.append(CriterionResult(name, "fail", CITATIONS["recurrence-uniqueness"],
                                           {"reason": "proportional to rho"}))
            continue
        if opt.verify_measures:
            from .weak_form import default_battery, invariance_residual
            rep = invariance_residual(cf, other, default_battery(d, seed=opt.seed))
            results.append(CriterionResult(name, rep.verdict, CITATIONS["recurrence-uniqueness"],
                                           {"max_relative": rep.max_relative}))
            if not rep.passed:
                continue
        else:
            results.append(CriterionResult(name, "pass", CITATIONS["recurrence-uniqueness"],
                                           {"registered": True, "verified": False}))
        others.append(name)

    # fold
    F = _Facts()
    if finite_hint is not None:
        F.set("finite", finite_hint, "finiteness declared with the density",
              [f"density {rho.name}: {rho.finiteness}"])
    if sym:
        F.set("symmetric", True, "symmetric-self-dual", ["perturbation B vanishes on samples"])
    for src in finite_sources:
        F.set("finite", True, "lyapunov-finite", [src])
    for src in rec_sources:
        F.set("recurrent", True, "lyapunov" if src.startswith(("lyapunov", "log", "eigen"))
              else src.split("[")[0], [src])
    if integral is not None and sym:
        if integral.verdict == "divergent":
            F.set("recurrent", True, "integral-test", [integral.name])
        elif integral.verdict == "convergent":
            F.set("recurrent", False, "integral-test", [integral.name])
    for src in cons_p_sources:
        F.set("conservative_primal", True, "growth", [src])
    for src in cons_d_sources:
        F.set("conservative_dual", True, "growth", [src])
    for src in ncons_p:
        F.set("conservative_primal", False, "nonconservative", [src])
    for src in ncons_d:
        F.set("conservative_dual", False, "nonconservative", [src])
    for src in others:
        F.set("unique_infinitesimally_invariant", False, "recurrence-uniqueness", [src])
        F.set("recurrent", False, "recurrence-uniqueness", [src, "second infinitesimally invariant measure"])

    for _ in range(10):
        changed = False
        rec = F.get("recurrent")
        cp, cd = F.get("conservative_primal"), F.get("conservative_dual")
        fin = F.get("finite")
        if rec is True:
            changed |= F.set("conservative_primal", True, "recurrence-conservative", ["recurrent"])
            changed |= F.set("conservative_dual", True, "recurrence-conservative", ["recurrent"])
            changed |= F.set("unique_infinitesimally_invariant", True, "recurrence-uniqueness",
                             ["recurrent"])
            changed |= F.set("unique_invariant", True, "recurrence-unique-invariant", ["recurrent"])
        if cp is False:
            changed |= F.set("recurrent", False, "recurrence-conservative",
                             ["primal semigroup non-conservative"])
        if cd is False:
            changed |= F.set("recurrent", False, "recurrence-conservative",
                             ["dual semigroup non-conservative"])
        if fin is True and (cp is True or cd is True):
            changed |= F.set("recurrent", True, "finite-conservative",
                             ["finite measure", "conservative " + ("primal" if cp else "dual")])
        if fin is True and rec is False:
            changed |= F.set("conservative_primal", False, "finite-conservative",
                             ["finite measure", "not recurrent"])
            changed |= F.set("conservative_dual", False, "finite-conservative",
                             ["finite measure", "not recurrent"])
        if F.get("symmetric"):
            if cp is not None:
                changed |= F.set("conservative_dual", cp, "symmetric-self-dual", ["primal conservativeness"])
            if cd is not None:
                changed |= F.set("conservative_primal", cd, "symmetric-self-dual", ["dual conservativeness"])
            if fin is True:
                changed |= F.set("conservative_dual", True, "symmetric-finite",
                                 ["finite symmetrizing measure"])
        cd = F.get("conservative_dual")
        cp = F.get("conservative_primal")
        if cd is not None:
            changed |= F.set("mu_invariant", cd, "duality", ["dual conservativeness"])
        if cp is not None:
            changed |= F.set("mu_dual_invariant", cp, "duality", ["primal conservativeness"])
        if not changed:
            break

    v = Verdict(outside_scope=d < 2, symmetric=bool(sym))
    rec = F.get("recurrent")
    v.recurrence = "recurrent" if rec is True else ("transient" if rec is False else "unknown")
    if rec is False:
        F.implications.append({"conclusion": "transient", "rule": "dichotomy",
                               "because": ["not recurrent"], "citation": CITATIONS["dichotomy"]})
    v.conservative_primal = F.get("conservative_primal")
    v.conservative_dual = F.get("conservative_dual")
    fin = F.get("finite")
    v.measure = "finite" if fin is True else ("infinite" if fin is False else "unknown")
    v.mu_invariant = F.get("mu_invariant")
    v.mu_dual_invariant = F.get("mu_dual_invariant")
    v.unique_infinitesimally_invariant = F.get("unique_infinitesimally_invariant")
    v.unique_invariant = F.get("unique_invariant")
    v.implications = F.implications
    v.evidence = [r.to_dict() for r in results]
    if sym_worst is not None:
        v.evidence.append({"name": "symmetry-detection", "verdict": "pass" if sym else "fail",
                           "citation": CITATIONS["symmetric-self-dual"], "heuristic": False,
                           "evidence": {"max_relative_perturbation": sym_worst}})
    v.inconsistencies = F.conflicts
    if F.conflicts:
        v.recurrence = "inconsistent"
    return v

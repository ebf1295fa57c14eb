"""Registry of worked examples with their coefficients, measures and expected verdicts.

Each case builds a :class:`CaseInstance` holding the coefficient field, the
candidate densities (with the invariance verdict each is expected to
receive), the expected classification fields with the statement that
backs each one, the criterion options that exercise it, and any extra
objects the case needs (Lyapunov functions, negative controls, simulation
defaults).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import dawsn

from .coefficients import CoefficientField, DensitySpec
from .criteria import ClassifyOptions, LyapunovSpec
from .fields import ScalarField
from .quadrature import unit_ball_volume
from .weak_form import TestFunction

__all__ = [
    "MeasureEntry",
    "CaseInstance",
    "ExampleCase",
    "list_cases",
    "instantiate",
    "get_case",
    "psi_profile",
    "log_lyapunov",
    "smooth_cutoff",
    "dawson_primitive",
]

OUTSIDE_SCOPE_NOTE = "d = 1 lies outside the theory's scope (d >= 2); kept because every formula is one-coordinate"


@dataclass
class MeasureEntry:
    """A candidate density and whether it is expected to be infinitesimally invariant."""

    density: DensitySpec
    expected_invariant: bool
    citation: str
    battery: dict = field(default_factory=dict)  # options for default_battery
    role: str = "mu"


@dataclass
class CaseInstance:
    case_id: str
    params: dict
    cf: CoefficientField
    measures: list[MeasureEntry]
    expected: dict
    citations: dict
    options: ClassifyOptions
    extras: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def rho(self) -> DensitySpec:
        """The reference density (first registered measure)."""
        return self.measures[0].density

    def measure(self, role: str) -> DensitySpec:
        for m in self.measures:
            if m.role == role:
                return m.density
        raise KeyError(f"case {self.case_id} has no measure with role {role!r}")


@dataclass
class ExampleCase:
    case_id: str
    summary: str
    citation: str
    defaults: dict
    ranges: dict
    builder: Callable[..., CaseInstance]

    def check(self, params: dict) -> dict:
        p = {**self.defaults, **params}
        unknown = set(p) - set(self.defaults)
        if unknown:
            raise ValueError(f"unknown parameters for {self.case_id}: {sorted(unknown)}")
        for k, check in self.ranges.items():
            ok, msg = check(p)
            if not ok:
                raise ValueError(f"{self.case_id}: {msg}")
        return p


# -- shared building blocks ------------------------------------------------------------

def _r2(X):
    return np.sum(X * X, axis=1)


def _const_density(d: int, name: str = "lebesgue") -> DensitySpec:
    w = unit_ball_volume(d)
    return DensitySpec(lambda X: np.ones(X.shape[0]), lambda X: np.zeros_like(X), name=name,
                       finiteness="infinite", radial_profile=lambda s: np.ones_like(s),
                       ball_measure=lambda r, w=w, d=d: w * r ** d)


def log_lyapunov(N0: float = 1.0) -> ScalarField:
    """``V = ln(|x| v N0) + 2`` with closed-form derivatives outside ``B_N0``."""
    def value(X):
        return 0.5 * np.log(np.maximum(_r2(X), N0 * N0)) + 2.0

    def grad(X):
        r2 = _r2(X)
        out = X / np.maximum(r2, N0 * N0)[:, None]
        return np.where((r2 > N0 * N0)[:, None], out, 0.0)

    def hess(X):
        r2 = _r2(X)
        d = X.shape[1]
        s = np.maximum(r2, N0 * N0)
        H = np.eye(d)[None] / s[:, None, None] - 2.0 * X[:, :, None] * X[:, None, :] / (s * s)[:, None, None]
        return np.where((r2 > N0 * N0)[:, None, None], H, 0.0)

    return ScalarField(value, grad, hess, name=f"ln(|x| v {N0:g}) + 2")


def psi_profile(y):
    """``y^2 (6 - y)`` on ``(0, 3]`` and ``54 - 81/y`` beyond, with first and second derivatives."""
    y = np.asarray(y, dtype=float)
    low = y <= 3.0
    ys = np.where(low, y, 3.0)
    yl = np.where(low, 3.0, y)
    v = np.where(low, ys * ys * (6.0 - ys), 54.0 - 81.0 / yl)
    d1 = np.where(low, 12.0 * ys - 3.0 * ys * ys, 81.0 / (yl * yl))
    d2 = np.where(low, 12.0 - 6.0 * ys, -162.0 / yl ** 3)
    return v, d1, d2


def _psi_lyapunov(d: int, i: int) -> ScalarField:
    """``V(x) = Psi(e^{-x_i})``: bounded, positive and smooth."""
    def parts(X):
        y = np.exp(-X[:, i])
        return (y,) + psi_profile(y)

    def value(X):
        return parts(X)[1]

    def grad(X):
        y, _, d1, _ = parts(X)
        g = np.zeros_like(X)
        g[:, i] = -d1 * y
        return g

    def hess(X):
        y, _, d1, d2 = parts(X)
        H = np.zeros((X.shape[0], d, d))
        H[:, i, i] = d2 * y * y + d1 * y
        return H

    return ScalarField(value, grad, hess, name=f"Psi(exp(-x{i + 1}))")


def smooth_cutoff(s, inner: float = 0.25, outer: float = 0.5):
    """``C^inf`` radial cutoff equal to 1 on ``[0, inner]`` and 0 from ``outer`` on; returns value and derivative."""
    s = np.asarray(s, dtype=float)
    w = outer - inner
    u = np.clip((outer - s) / w, 0.0, 1.0)
    inside = (u > 0) & (u < 1)
    uu = np.where(inside, u, 0.5)
    a = np.exp(-1.0 / uu)
    b = np.exp(-1.0 / (1.0 - uu))
    val = np.where(inside, a / (a + b), np.where(u >= 1, 1.0, 0.0))
    da = a / uu ** 2
    db = b / (1.0 - uu) ** 2
    dstep = (da * (a + b) - a * (da - db)) / (a + b) ** 2
    deriv = np.where(inside, -dstep / w, 0.0)
    return val, deriv


def dawson_primitive(x):
    """``int_0^x e^{s^2} ds = e^{x^2} D(x)`` with ``D`` the Dawson function."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        return np.exp(x * x) * dawsn(x)


def _unit(d: int, i: int) -> np.ndarray:
    e = np.zeros(d)
    e[i] = 1.0
    return e


def _c_vector(d: int, c) -> np.ndarray:
    """``c`` as a d-vector; ``None`` means ``e_1`` and a scalar means ``c e_1``."""
    if c is None:
        return _unit(d, 0)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.size == 1 and d > 1:
        c = np.concatenate([c, np.zeros(d - 1)])
    if c.size != d:
        raise ValueError(f"c must have {d} components")
    return c


def _growth(M=1.0, N0=1.0):
    return {"M": M, "N0": N0}


# -- cases ------------------------------------------------------------------------------

def _radial_power(d: int, m: float) -> CaseInstance:
    w = unit_ball_volume(d)

    def G(X):
        r2 = _r2(X)
        return np.where((r2 > 1.0)[:, None], m * X / (2.0 * np.maximum(r2, 1.0))[:, None], 0.0)

    cf = CoefficientField.constant(np.eye(d), G, name=f"radial-power(d={d}, m={m:g})")
    cf.kink_radii = (1.0,)

    def profile(s):
        s = np.asarray(s, dtype=float)
        return np.where(s > 1.0, np.maximum(s, 1.0) ** m, 1.0)

    def rho(X):
        return profile(np.sqrt(_r2(X)))

    def grad(X):
        r2 = _r2(X)
        return np.where((r2 > 1.0)[:, None], m * X * np.maximum(r2, 1.0)[:, None] ** (0.5 * m - 1.0), 0.0)

    def ball_measure(r):
        if r <= 1.0:
            return w * r ** d
        if m + d == 0:
            return d * w * math.log(r) + w
        return d * w / (m + d) * (r ** (m + d) - 1.0) + w

    fin = "finite" if m + d < 0 else "infinite"
    dens = DensitySpec(rho, grad, name=f"|x|^{m:g} outside B_1", finiteness=fin,
                       radial_profile=profile, kink_radii=(1.0,), ball_measure=ball_measure)
    rec = m + d <= 2
    expected = {"recurrence": "recurrent" if rec else "transient",
                "measure": "finite" if m + d < 0 else "infinite",
                "conservative_primal": True, "conservative_dual": True}
    cit = "radial power density with drift m x / (2|x|^2): recurrent iff m + d <= 2"
    citations = {"recurrence": cit,
                 "measure": "mu(B_r) grows like r^(m+d), finite iff m + d < 0",
                 "conservative_primal": "growth bound: the log-Lyapunov left side is the constant (d + m - 2)/2",
                 "conservative_dual": "zero perturbation: the dual coincides with the primal"}
    if rec:
        expected.update({"unique_infinitesimally_invariant": True, "unique_invariant": True})
        citations.update({"unique_infinitesimally_invariant": "recurrence implies uniqueness",
                          "unique_invariant": "recurrence implies uniqueness"})
    opts = ClassifyOptions(lyapunov=[LyapunovSpec(log_lyapunov(1.0), 1.0, "recurrence", name="log")],
                           layporec={"c": 0.0, "N0": 1.0}, integral_test={"r_max": 1e4, "points": 41},
                           growth=_growth(), dual_growth=_growth())
    return CaseInstance("radial-power", {"d": d, "m": m}, cf,
                        [MeasureEntry(dens, True, "infinitesimally invariant by construction (G = grad rho / 2 rho)")],
                        expected, citations, opts)


def _series_density(d: int, p: float, gamma: float) -> CaseInstance:
    def psi(Y):
        s = np.sqrt(_r2(Y))
        cut, dcut = smooth_cutoff(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(s < 0.5, s ** gamma * cut, 0.0)
            safe = np.where(s > 0, s, 1.0)
            radial = np.where((s > 0) & (s < 0.5),
                              gamma * safe ** (gamma - 1.0) * cut + safe ** gamma * dcut, 0.0)
            grad = radial[:, None] * Y / safe[:, None]
        return val, grad

    def phi(X):
        k = np.rint(X[:, 0])
        Y = X.copy()
        Y[:, 0] -= k
        val, grad = psi(Y)
        use = k >= 1
        return 1.0 + np.where(use, val, 0.0), np.where(use[:, None], grad, 0.0)

    def rho(X):
        f, _ = phi(X)
        return np.exp(-_r2(X) * f)

    def log_grad(X):
        f, g = phi(X)
        return -2.0 * f[:, None] * X - _r2(X)[:, None] * g

    def grad(X):
        return rho(X)[:, None] * log_grad(X)

    cf = CoefficientField.constant(np.eye(d), lambda X: 0.5 * log_grad(X),
                                   name=f"series-density(d={d}, p={p:g}, gamma={gamma:g})")
    dens = DensitySpec(rho, grad, name="exp(-|x|^2 phi)", finiteness="finite",
                       metadata={"singular_points": "k e_1, k >= 1"}, log_grad=log_grad)
    cit = "series density exp(-|x|^2 phi): finite, invariant, hence recurrent with unique measures"
    expected = {"recurrence": "recurrent", "measure": "finite", "mu_invariant": True,
                "unique_infinitesimally_invariant": True, "unique_invariant": True}
    citations = {k: cit for k in expected}
    opts = ClassifyOptions(symmetric=True, R_max=10.0)
    return CaseInstance("series-density", {"d": d, "p": p, "gamma": gamma}, cf,
                        [MeasureEntry(dens, True, cit)], expected, citations, opts,
                        notes=["the gradient of phi is singular at k e_1; the weak-form battery avoids those points",
                               "psi is |y|^gamma times a smooth cutoff equal to 1 on B_1/4 and 0 outside B_1/2"])


def _constant_drift(d: int, c) -> CaseInstance:
    cv = _c_vector(d, c)
    cf = CoefficientField.constant(np.eye(d), lambda X: np.broadcast_to(cv, X.shape).copy(),
                                   name="constant-drift")
    leb = _const_density(d)

    def rt(X):
        return 1.0 + np.exp(2.0 * X @ cv)

    def rt_grad(X):
        return 2.0 * np.exp(2.0 * X @ cv)[:, None] * cv[None, :]

    rho_t = DensitySpec(rt, rt_grad, name="1 + exp(2<c,x>)", finiteness="infinite")
    rho_neg = DensitySpec(lambda X: np.exp(X @ cv), lambda X: np.exp(X @ cv)[:, None] * cv[None, :],
                          name="exp(<c,x>)", finiteness="infinite")
    cit = "constant drift c: Lebesgue measure and (1 + e^{2<c,x>}) dx are both invariant"
    expected = {"recurrence": "transient", "conservative_primal": True, "conservative_dual": True,
                "mu_invariant": True, "unique_infinitesimally_invariant": False,
                "measure": "infinite"}
    citations = {"recurrence": "two non-proportional invariant measures exclude recurrence",
                 "conservative_primal": cit, "conservative_dual": cit, "mu_invariant": cit,
                 "unique_infinitesimally_invariant": cit, "measure": "Lebesgue measure is infinite"}
    opts = ClassifyOptions(growth=_growth(), dual_growth=_growth(), other_measures=[rho_t])
    return CaseInstance("constant-drift-two-measures", {"d": d, "c": cv.tolist()}, cf,
                        [MeasureEntry(leb, True, cit, role="mu"),
                         MeasureEntry(rho_t, True, cit, role="mu_tilde")],
                        expected, citations, opts,
                        extras={"negative_control": rho_neg,
                                "survival": {"x": tuple(np.zeros(d)), "t": 1.0, "R_kill": 50.0,
                                             "scheme": "euler-maruyama", "expect": "one"},
                                "coexcessive": {"points": [tuple(-cv), tuple(np.zeros(d)), tuple(cv)],
                                                "t": 0.25, "rho": leb, "rho_tilde": rho_t}})


def _exp_quadratic(d: int, c) -> CaseInstance:
    cv = _c_vector(d, c)
    eye = np.eye(d)

    def A(X):
        return np.exp(_r2(X))[:, None, None] * eye[None]

    def sigma(X):
        return np.exp(0.5 * _r2(X))[:, None, None] * eye[None]

    def divA(X):
        return 2.0 * X * np.exp(_r2(X))[:, None]

    cf = CoefficientField(d, A, lambda X: np.exp(_r2(X))[:, None] * cv[None, :],
                          diffusion_divergence=divA, sigma=sigma, name="exp-quadratic")
    rho = DensitySpec(lambda X: np.exp(-_r2(X)), lambda X: -2.0 * X * np.exp(-_r2(X))[:, None],
                      name="exp(-|x|^2)", finiteness="finite", total_mass=math.pi ** (d / 2),
                      radial_profile=lambda s: np.exp(-np.asarray(s) ** 2),
                      log_grad=lambda X: -2.0 * X)

    def rt(X):
        return np.exp(-_r2(X) + 2.0 * X @ cv)

    rho_t = DensitySpec(rt, lambda X: (-2.0 * X + 2.0 * cv[None, :]) * rt(X)[:, None],
                        name="exp(-|x|^2 + 2<c,x>)", finiteness="finite",
                        total_mass=math.pi ** (d / 2) * math.exp(float(cv @ cv)),
                        log_grad=lambda X: -2.0 * X + 2.0 * cv[None, :])
    cit = "A = e^{|x|^2} id, G = e^{|x|^2} c: two finite infinitesimally invariant measures"
    expected = {"recurrence": "transient", "measure": "finite", "conservative_primal": False,
                "conservative_dual": False, "mu_invariant": False,
                "unique_infinitesimally_invariant": False}
    citations = {k: cit + "; transient and non-conservative" for k in expected}
    opts = ClassifyOptions(growth=_growth(), other_measures=[rho_t], R_max=10.0)
    return CaseInstance("exp-quadratic-two-finite", {"d": d, "c": cv.tolist()}, cf,
                        [MeasureEntry(rho, True, cit, role="mu"),
                         MeasureEntry(rho_t, True, cit, role="mu_tilde")],
                        expected, citations, opts,
                        extras={"survival": {"x": tuple(2.0 * _unit(d, 0)), "t": 1.0, "R_kill": 10.0,
                                             "scheme": "tamed", "expect": "below-one"}})


def _finite_plus_infinite(d: int) -> CaseInstance:
    e1 = _unit(d, 0)

    def G(X):
        with np.errstate(over="ignore"):
            return -X + np.exp(X[:, 0] ** 2)[:, None] * e1[None, :]

    cf = CoefficientField.constant(np.eye(d), G, name="finite-plus-infinite")
    rho = DensitySpec(lambda X: np.exp(-_r2(X)), lambda X: -2.0 * X * np.exp(-_r2(X))[:, None],
                      name="exp(-|x|^2)", finiteness="finite", total_mass=math.pi ** (d / 2),
                      radial_profile=lambda s: np.exp(-np.asarray(s) ** 2),
                      log_grad=lambda X: -2.0 * X)

    def rt(X):
        with np.errstate(over="ignore"):
            return np.exp(-_r2(X) + 2.0 * dawson_primitive(X[:, 0]))

    def rt_grad(X):
        with np.errstate(over="ignore", invalid="ignore"):
            return (-2.0 * X + 2.0 * np.exp(X[:, 0] ** 2)[:, None] * e1[None, :]) * rt(X)[:, None]

    rho_t = DensitySpec(rt, rt_grad, name="exp(-|x|^2 + 2w(x1))", finiteness="infinite",
                        metadata={"w": "int_0^{x1} e^{s^2} ds", "overflow_beyond_x1": 2.8})
    cit = "G = -x + e^{x1^2} e1 with finite mu = e^{-|x|^2} dx and infinite mu_tilde"
    expected = {"recurrence": "transient", "measure": "finite", "conservative_primal": False,
                "conservative_dual": False, "mu_invariant": False,
                "unique_infinitesimally_invariant": False}
    citations = {k: cit + "; transient and non-conservative" for k in expected}
    opts = ClassifyOptions(growth=_growth(), other_measures=[rho_t], R_max=10.0)
    return CaseInstance("finite-plus-infinite-pair", {"d": d}, cf,
                        [MeasureEntry(rho, True, cit, role="mu"),
                         MeasureEntry(rho_t, True, cit, role="mu_tilde",
                                      battery={"region_radius": 1.5, "radius_range": (0.2, 0.5)})],
                        expected, citations, opts,
                        notes=["mu_tilde overflows in double precision for x1 beyond about 2.8; "
                               "its battery stays inside B_1.5"])


def _semigroup_probe(d: int, i: int, expected: bool) -> dict:
    """Settings for comparing ``int P_t f dmu`` with ``int f dmu`` on a bump left of the origin."""
    return {"test": TestFunction(-2.0 * _unit(d, i), 1.0), "t": 0.25, "h": 2e-3, "scheme": "adaptive",
            "R_kill": 10.0, "panels": 8, "paths_per_node": 2000, "expected": expected}


def _exp_one_coordinate(d: int, i: int, sign: float, case_id: str) -> CaseInstance:
    """Drift ``(1/2 + sign e^{-x_i}/2) e_i`` with ``rho = e^{x_i}``."""
    ei = _unit(d, i)

    def G(X):
        with np.errstate(over="ignore"):
            return (0.5 + sign * 0.5 * np.exp(-X[:, i]))[:, None] * ei[None, :]

    cf = CoefficientField.constant(np.eye(d), G, name=case_id)
    rho = DensitySpec(lambda X: np.exp(X[:, i]), lambda X: np.exp(X[:, i])[:, None] * ei[None, :],
                      name=f"exp(x{i + 1})", finiteness="infinite")

    def rt(X):
        with np.errstate(over="ignore"):
            return np.exp(X[:, i] - sign * np.exp(-X[:, i]))

    def rt_grad(X):
        with np.errstate(over="ignore"):
            return (rt(X) * (1.0 + sign * np.exp(-X[:, i])))[:, None] * ei[None, :]

    sgn = "-" if sign > 0 else "+"
    rho_t = DensitySpec(rt, rt_grad, name=f"exp(x{i + 1} {sgn} e^(-x{i + 1}))", finiteness="infinite")
    V = _psi_lyapunov(d, i)
    notes = [OUTSIDE_SCOPE_NOTE] if d == 1 else []
    if sign > 0:
        cit = "G = (1/2 + e^{-x_i}/2) e_i, rho = e^{x_i}: conservative, dual non-conservative"
        expected = {"recurrence": "transient", "conservative_primal": True,
                    "conservative_dual": False, "mu_invariant": False, "measure": "infinite"}
        lyap = LyapunovSpec(V, 0.0, "nonconservative-dual", alpha=0.25, name="Psi")
        opts = ClassifyOptions(lyapunov=[lyap], growth=_growth(), R_max=20.0)
        extras = {"lyapunov": lyap,
                  "coexcessive": {"points": [tuple(v * ei) for v in (-1.0, 0.0, 2.0)],
                                  "t": 0.25, "rho": rho_t, "rho_tilde": rho,
                                  "h": lambda X: np.exp(-np.exp(-X[:, i]))},
                  "semigroup_invariance": _semigroup_probe(d, i, expected=False)}
        measures = [MeasureEntry(rho, True, "mu = e^{x_i} dx is infinitesimally invariant but not invariant",
                                 role="mu"),
                    MeasureEntry(rho_t, True, cit, role="mu_tilde")]
    else:
        cit = "G = (1/2 - e^{-x_i}/2) e_i, rho = e^{x_i}: mu invariant though the semigroup is non-conservative"
        expected = {"recurrence": "transient", "conservative_primal": False,
                    "conservative_dual": True, "mu_invariant": True, "measure": "infinite"}
        lyap = LyapunovSpec(V, 0.0, "nonconservative-primal", alpha=0.25, name="Psi")
        opts = ClassifyOptions(lyapunov=[lyap], dual_growth=_growth(), R_max=20.0)
        extras = {"lyapunov": lyap, "semigroup_invariance": _semigroup_probe(d, i, expected=True)}
        measures = [MeasureEntry(rho, True, cit, role="mu"),
                    MeasureEntry(rho_t, True, cit, role="mu_tilde")]
    citations = {k: cit for k in expected}
    return CaseInstance(case_id, {"d": d, "i": i + 1}, cf, measures, expected, citations, opts,
                        extras=extras, notes=notes)


def _brownian(d: int) -> CaseInstance:
    cf = CoefficientField.constant(np.eye(d), lambda X: np.zeros_like(X), name=f"brownian(d={d})")
    leb = _const_density(d)
    rec = d <= 2
    cit = "Brownian motion: recurrent for d <= 2, transient for d >= 3"
    expected = {"recurrence": "recurrent" if rec else "transient", "measure": "infinite",
                "conservative_primal": True, "conservative_dual": True}
    citations = {k: cit for k in expected}
    opts = ClassifyOptions(integral_test={"r_max": 1e4, "points": 41}, growth=_growth(),
                           dual_growth=_growth(), layporec={"c": 0.0, "N0": 1.0})
    return CaseInstance("brownian", {"d": d}, cf, [MeasureEntry(leb, True, cit)], expected,
                        citations, opts, notes=[OUTSIDE_SCOPE_NOTE] if d == 1 else [])


def _ornstein_uhlenbeck(d: int) -> CaseInstance:
    cf = CoefficientField.constant(2.0 * np.eye(d), lambda X: -X, name=f"ornstein-uhlenbeck(d={d})")
    Z = (2.0 * math.pi) ** (d / 2)
    rho = DensitySpec(lambda X: np.exp(-0.5 * _r2(X)), lambda X: -X * np.exp(-0.5 * _r2(X))[:, None],
                      name="exp(-|x|^2/2)", finiteness="finite", total_mass=Z,
                      radial_profile=lambda s: np.exp(-0.5 * np.asarray(s) ** 2),
                      log_grad=lambda X: -X)
    cit = "log-Lyapunov criterion with c > 0: recurrent with a finite invariant measure"
    expected = {"recurrence": "recurrent", "measure": "finite", "conservative_primal": True,
                "conservative_dual": True, "mu_invariant": True,
                "unique_infinitesimally_invariant": True, "unique_invariant": True}
    citations = {k: cit for k in expected}
    N0 = math.sqrt(2.0 * d) + 0.1
    V = ScalarField(lambda X: 1.0 + _r2(X), lambda X: 2.0 * X,
                    lambda X: np.broadcast_to(2.0 * np.eye(d), (X.shape[0], d, d)).copy(), name="1 + |x|^2")
    opts = ClassifyOptions(layporec={"c": 0.5, "N0": N0},
                           lyapunov=[LyapunovSpec(V, N0, "finite-measure", c=N0 * N0, name="1+|x|^2")],
                           growth=_growth())
    return CaseInstance("ornstein-uhlenbeck", {"d": d}, cf, [MeasureEntry(rho, True, cit)], expected,
                        citations, opts, extras={"Q": np.eye(d), "B": -np.eye(d)})


def _int_param(name, lo, hi=None):
    def check(p):
        v = p[name]
        ok = float(v).is_integer() and v >= lo and (hi is None or v <= hi)
        return ok, f"{name} must be an integer in [{lo}, {hi if hi is not None else 'inf'}], got {v}"
    return check


def _series_check(p):
    d, q, g = p["d"], p["p"], p["gamma"]
    ok = q > d and 0 < g < 1 and q * (1 - g) < d
    return ok, f"need p > d, gamma in (0, 1) and p (1 - gamma) < d; got d={d}, p={q}, gamma={g}"


_CASES = [
    ExampleCase("radial-power", "A = id, rho = |x|^m outside B_1, G = grad rho / (2 rho)",
                "radial power density", {"d": 2, "m": -2.0}, {"d": _int_param("d", 1, 4)},
                lambda d, m: _radial_power(int(d), float(m))),
    ExampleCase("series-density", "rho = exp(-|x|^2 phi) with phi singular at k e_1",
                "series density with singular gradient", {"d": 2, "p": 2.5, "gamma": 0.5},
                {"d": _int_param("d", 2, 3), "p": _series_check},
                lambda d, p, gamma: _series_density(int(d), float(p), float(gamma))),
    ExampleCase("constant-drift-two-measures", "A = id, G = c; dx and (1 + e^{2<c,x>}) dx invariant",
                "two distinct invariant measures", {"d": 2, "c": None}, {"d": _int_param("d", 1, 4)},
                lambda d, c: _constant_drift(int(d), c)),
    ExampleCase("exp-quadratic-two-finite", "A = e^{|x|^2} id, G = e^{|x|^2} c; two finite measures",
                "two finite infinitesimally invariant measures", {"d": 2, "c": None},
                {"d": _int_param("d", 2, 3)}, lambda d, c: _exp_quadratic(int(d), c)),
    ExampleCase("finite-plus-infinite-pair", "G = -x + e^{x1^2} e1; finite mu, infinite mu_tilde",
                "finite and infinite infinitesimally invariant pair", {"d": 2}, {"d": _int_param("d", 2, 3)},
                lambda d: _finite_plus_infinite(int(d))),
    ExampleCase("dual-nonconservative", "G = (1/2 + e^{-x_i}/2) e_i, rho = e^{x_i}",
                "conservative semigroup with non-conservative dual", {"d": 1, "i": 1},
                {"d": _int_param("d", 1, 3), "i": lambda p: (1 <= p["i"] <= p["d"], "need 1 <= i <= d")},
                lambda d, i: _exp_one_coordinate(int(d), int(i) - 1, 1.0, "dual-nonconservative")),
    ExampleCase("dual-invariant-nonconservative-primal", "G = (1/2 - e^{-x_i}/2) e_i, rho = e^{x_i}",
                "invariant measure with non-conservative semigroup", {"d": 1, "i": 1},
                {"d": _int_param("d", 1, 3), "i": lambda p: (1 <= p["i"] <= p["d"], "need 1 <= i <= d")},
                lambda d, i: _exp_one_coordinate(int(d), int(i) - 1, -1.0,
                                                 "dual-invariant-nonconservative-primal")),
    ExampleCase("brownian", "A = id, G = 0, Lebesgue measure", "Brownian motion", {"d": 2},
                {"d": _int_param("d", 1, 4)}, lambda d: _brownian(int(d))),
    ExampleCase("ornstein-uhlenbeck", "A = 2 id, G = -x, Gaussian measure", "Ornstein-Uhlenbeck process",
                {"d": 2}, {"d": _int_param("d", 1, 4)}, lambda d: _ornstein_uhlenbeck(int(d))),
]
_BY_ID = {c.case_id: c for c in _CASES}


def list_cases() -> list[tuple[str, str]]:
    """Case ids with one-line summaries, in registration order."""
    return [(c.case_id, c.summary) for c in _CASES]


def get_case(case_id: str) -> ExampleCase:
    try:
        return _BY_ID[case_id]
    except KeyError:
        raise KeyError(f"unknown example {case_id!r}; known: {', '.join(_BY_ID)}") from None


def instantiate(case_id: str, **params) -> CaseInstance:
    case = get_case(case_id)
    p = case.check(params)
    inst = case.builder(**p)
    inst.params = {**p, **inst.params}
    return inst

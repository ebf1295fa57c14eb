"""Adaptive tensor-product Gauss–Legendre quadrature on boxes and balls.

Each cell is integrated with a 7-point tensor rule; a 5-point tensor rule on
the same cell gives the error estimate ``|Q7 - Q5|``, which bounds the error
of the lower-order rule and is therefore conservative for ``Q7``. Cells are
refined by dyadic bisection in every coordinate, always splitting the cells
that carry the largest share of the estimated error.

Integrands map ``(n, d)`` points to ``(n,)`` or ``(n, k)`` values, so several
related integrals (for example a residual and its normaliser) share nodes.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

__all__ = [
    "QuadratureResult",
    "box_integral",
    "ball_integral",
    "radial_integral",
    "tensor_rule",
    "unit_ball_volume",
    "unit_sphere_area",
    "uniform_refinement_errors",
    "MAX_TENSOR_DIM",
]

MAX_TENSOR_DIM = 4

_GL7 = np.polynomial.legendre.leggauss(7)
_GL5 = np.polynomial.legendre.leggauss(5)


def unit_ball_volume(d: int) -> float:
    return math.exp(0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0))


def unit_sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d, equal to ``d`` times the ball volume."""
    return d * unit_ball_volume(d)


@dataclass
class QuadratureResult:
    value: np.ndarray | float
    error: np.ndarray | float
    converged: bool
    n_cells: int
    n_evals: int
    levels: int

    def scalar(self) -> "QuadratureResult":
        return QuadratureResult(float(np.ravel(self.value)[0]), float(np.ravel(self.error)[0]),
                                self.converged, self.n_cells, self.n_evals, self.levels)


def tensor_rule(order: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on ``[-1, 1]^d`` and weights of the tensor Gauss–Legendre rule."""
    x, w = np.polynomial.legendre.leggauss(order)
    nodes = np.array(list(itertools.product(x, repeat=d)))
    weights = np.prod(np.array(list(itertools.product(w, repeat=d))), axis=1)
    return nodes, weights


_RULES: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _rule(order: int, d: int):
    key = (order, d)
    if key not in _RULES:
        _RULES[key] = tensor_rule(order, d)
    return _RULES[key]


def _integrate_cells(f, lo: np.ndarray, hi: np.ndarray):
    """Order-7 values and order-5 error estimates for a batch of cells ``(m, d)``."""
    m, d = lo.shape
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    vol = np.prod(half, axis=1)
    out = []
    for order in (7, 5):
        nodes, weights = _rule(order, d)
        P = (mid[:, None, :] + half[:, None, :] * nodes[None, :, :]).reshape(-1, d)
        v = np.asarray(f(P), dtype=float)
        v = v.reshape(m, nodes.shape[0], -1)
        out.append(np.einsum("mnk,n->mk", v, weights) * vol[:, None])
    q7, q5 = out
    return q7, np.abs(q7 - q5), m * (len(_GL7[0]) ** d + len(_GL5[0]) ** d)


def _split(lo: np.ndarray, hi: np.ndarray):
    d = lo.shape[1]
    mid = 0.5 * (lo + hi)
    los, his = [], []
    for corner in itertools.product((0, 1), repeat=d):
        c = np.array(corner, dtype=bool)
        los.append(np.where(c, mid, lo))
        his.append(np.where(c, hi, mid))
    return np.concatenate(los), np.concatenate(his)


def box_integral(f: Callable[[np.ndarray], np.ndarray], lo: Sequence[float], hi: Sequence[float],
                 atol: float | Callable[[np.ndarray], float] = 1e-10, *,
                 control: int | None = 0, max_cells: int | None = None,
                 initial_splits: int = 0) -> QuadratureResult:
    """Adaptive integral of ``f`` over the box ``[lo, hi]``.

    Parameters
    ----------
    f : callable
        Vectorised integrand returning ``(n,)`` or ``(n, k)``.
    atol : float or callable
        Absolute target for the summed error estimate of component ``control``.
        A callable receives the current value vector and returns the target,
        which allows tolerances relative to a companion integral.
    control : int or None
        Component whose error drives refinement; ``None`` uses the maximum
        over components.
    max_cells : int, optional
        Refinement budget. On exhaustion the result is flagged unconverged.
    initial_splits : int
        Number of uniform dyadic refinements before adaptation starts.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))[None, :]
    hi = np.atleast_1d(np.asarray(hi, dtype=float))[None, :]
    d = lo.shape[1]
    if d > MAX_TENSOR_DIM:
        raise ValueError(f"tensor quadrature is limited to d <= {MAX_TENSOR_DIM}, got d={d}")
    if np.any(hi <= lo):
        raise ValueError("empty integration box")
    if max_cells is None:
        max_cells = {1: 4096, 2: 16384, 3: 8192, 4: 4096}[d]
    for _ in range(initial_splits):
        lo, hi = _split(lo, hi)

    q, e, n_evals = _integrate_cells(f, lo, hi)
    n_cells = lo.shape[0]
    levels = initial_splits

    def comp(err):
        return err.max(axis=-1) if control is None else err[..., control]

    while True:
        total = q.sum(axis=0)
        err_total = e.sum(axis=0)
        target = atol(total) if callable(atol) else atol
        if comp(err_total) <= target:
            converged = True
            break
        ce = comp(e)
        # split the cells carrying half of the outstanding error
        order = np.argsort(-ce, kind="stable")
        cum = np.cumsum(ce[order])
        need = comp(err_total) - target
        k = int(np.searchsorted(cum, 0.5 * need) + 1)
        k = min(max(k, 1), order.shape[0])
        new_cells = n_cells + k * (2 ** d - 1)
        if new_cells > max_cells:
            converged = False
            break
        pick, keep = order[:k], order[k:]
        clo, chi = _split(lo[pick], hi[pick])
        cq, ce_, ne = _integrate_cells(f, clo, chi)
        lo = np.concatenate([lo[keep], clo])
        hi = np.concatenate([hi[keep], chi])
        q = np.concatenate([q[keep], cq])
        e = np.concatenate([e[keep], ce_])
        n_evals += ne
        n_cells = new_cells
        levels += 1
    value = q.sum(axis=0)
    error = e.sum(axis=0)
    if value.shape[0] == 1:
        return QuadratureResult(float(value[0]), float(error[0]), converged, n_cells, n_evals, levels)
    return QuadratureResult(value, error, converged, n_cells, n_evals, levels)


def uniform_refinement_errors(f, lo, hi, levels: int) -> list[float]:
    """Summed ``|Q7 - Q5|`` estimates after 0, 1, ..., ``levels`` uniform dyadic refinements."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))[None, :]
    hi = np.atleast_1d(np.asarray(hi, dtype=float))[None, :]
    out = []
    for _ in range(levels + 1):
        _, e, _ = _integrate_cells(f, lo, hi)
        out.append(float(e.sum()))
        lo, hi = _split(lo, hi)
    return out


# -- balls in hyperspherical coordinates -------------------------------------

def _spherical_to_cartesian(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``P = (s, phi_1, ..., phi_{d-1})`` to Cartesian points and the volume Jacobian."""
    s = P[:, 0]
    d = P.shape[1]
    if d == 1:
        return s[:, None], np.ones_like(s)
    angles = P[:, 1:]
    X = np.empty_like(P)
    jac = s ** (d - 1)
    sin_prod = np.ones_like(s)
    for k in range(d - 1):
        X[:, k] = s * sin_prod * np.cos(angles[:, k])
        if k < d - 2:
            jac = jac * np.sin(angles[:, k]) ** (d - 2 - k)
        sin_prod = sin_prod * np.sin(angles[:, k])
    X[:, d - 1] = s * sin_prod
    return X, np.abs(jac)


def ball_integral(f: Callable[[np.ndarray], np.ndarray], d: int, radius: float, *,
                  inner_radius: float = 0.0, kink_radii: Sequence[float] = (),
                  atol: float = 1e-10, rtol: float = 0.0,
                  max_cells: int | None = None) -> QuadratureResult:
    """Integral of ``f`` over the shell ``inner_radius <= |x| <= radius`` about the origin.

    The radial range is split at ``kink_radii`` so that integrands which are
    only piecewise smooth across spheres are integrated to full order.
    """
    if radius <= inner_radius:
        raise ValueError("radius must exceed inner_radius")
    cuts = [inner_radius] + sorted(r for r in kink_radii if inner_radius < r < radius) + [radius]
    if d == 1:
        def g(P):
            s = P[:, :1]
            return np.asarray(f(s), dtype=float) + np.asarray(f(-s), dtype=float)
        ang_lo, ang_hi = [], []
    else:
        def g(P):
            X, jac = _spherical_to_cartesian(P)
            v = np.asarray(f(X), dtype=float)
            return v * (jac if v.ndim == 1 else jac[:, None])
        ang_lo = [0.0] * (d - 1)
        ang_hi = [math.pi] * (d - 2) + [2.0 * math.pi]
    values, errors, conv, cells, evals, levels = [], [], True, 0, 0, 0
    pieces = list(zip(cuts[:-1], cuts[1:]))
    for a, b in pieces:
        tol = atol / len(pieces)
        if rtol > 0:
            # a cheap first pass sets the relative scale
            rough = box_integral(g, [a] + ang_lo, [b] + ang_hi, atol=np.inf, control=None)
            tol = max(tol, rtol * float(np.max(np.abs(rough.value))) / len(pieces))
        res = box_integral(g, [a] + ang_lo, [b] + ang_hi, atol=tol, control=None,
                           max_cells=max_cells, initial_splits=1 if d > 1 else 0)
        values.append(np.asarray(res.value))
        errors.append(np.asarray(res.error))
        conv &= res.converged
        cells += res.n_cells
        evals += res.n_evals
        levels = max(levels, res.levels)
    value = np.sum(values, axis=0)
    error = np.sum(errors, axis=0)
    if value.ndim == 0:
        value, error = float(value), float(error)
    return QuadratureResult(value, error, conv, cells, evals, levels)


def radial_integral(profile: Callable[[np.ndarray], np.ndarray], d: int, radius: float, *,
                    inner_radius: float = 0.0, kink_radii: Sequence[float] = (),
                    rtol: float = 1e-12) -> QuadratureResult:
    """``|S^{d-1}| * int_{inner}^{radius} profile(s) s^{d-1} ds`` for a radial density profile."""
    area = unit_sphere_area(d)
    cuts = [inner_radius] + sorted(r for r in kink_radii if inner_radius < r < radius) + [radius]

    def g(P):
        s = P[:, 0]
        return area * np.asarray(profile(s), dtype=float) * s ** (d - 1)

    total, err, conv, cells, evals, lev = 0.0, 0.0, True, 0, 0, 0
    for a, b in zip(cuts[:-1], cuts[1:]):
        rough = box_integral(g, [a], [b], atol=np.inf)
        tol = max(rtol * abs(float(rough.value)), 1e-300)
        res = box_integral(g, [a], [b], atol=tol)
        total += float(res.value)
        err += float(res.error)
        conv &= res.converged
        cells += res.n_cells
        evals += res.n_evals
        lev = max(lev, res.levels)
    return QuadratureResult(total, err, conv, cells, evals, lev)

"""Operator data: diffusion matrix, drift, densities and the operators built from them.

The generator acts as ``L f = 1/2 tr(A Hess f) + <G, grad f>``. For a strictly
positive density ``rho`` the symmetric drift is

    beta = 1/2 div_rows(A) + A grad(rho) / (2 rho)

where ``div_rows(A)_i = sum_j d_j a_ij`` (divergence of each *row* of ``A``).
The antisymmetric remainder ``G - beta`` enters the dual operator with the
opposite sign: ``L' f = 1/2 tr(A Hess f) + <2 beta - G, grad f>``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import qmc

from .expr import Expression, parse
from .fields import ArrayFn, ScalarField, as_points, fd_gradient, fd_partial

__all__ = [
    "DensityError",
    "FactorizationError",
    "CoefficientField",
    "DensitySpec",
    "DriftDecomposition",
    "EllipticityReport",
    "apply_L",
    "apply_L_dual",
    "apply_L_symmetric",
    "drift_decomposition",
    "check_ellipticity",
    "diffusion_factor",
    "cholesky_batch",
    "ball_points",
]


class DensityError(ValueError):
    """A density evaluated to a non-positive or non-finite value."""


class FactorizationError(np.linalg.LinAlgError):
    def __init__(self, pivot: int, point, value: float):
        super().__init__(
            f"diffusion matrix is not positive definite: pivot {pivot} = {value:.6g} "
            f"at x = {np.array2string(np.asarray(point), precision=6)}")
        self.pivot = pivot
        self.point = np.asarray(point)
        self.value = value


def _upper_to_full(entries, d: int):
    """Index map for a symmetric matrix given by its upper triangle (row-major)."""
    idx = {}
    k = 0
    for i in range(d):
        for j in range(i, d):
            idx[(i, j)] = idx[(j, i)] = k
            k += 1
    if len(entries) != k:
        raise ValueError(f"expected {k} upper-triangle entries for d={d}, got {len(entries)}")
    return idx


class CoefficientField:
    """Diffusion matrix ``A`` and drift ``G`` on R^d.

    ``diffusion`` maps ``(n, d)`` points to ``(n, d, d)`` symmetric matrices and
    ``drift`` maps them to ``(n, d)``. Optional analytic pieces:
    ``diffusion_divergence`` (row divergence of ``A``) and ``sigma`` (a square
    root with ``sigma sigma^T = A``). ``kink_radii`` lists spheres about the
    origin across which the coefficients may jump; quadrature splits there.
    """

    def __init__(self, d: int, diffusion: ArrayFn, drift: ArrayFn, *,
                 diffusion_divergence: ArrayFn | None = None,
                 sigma: ArrayFn | None = None,
                 name: str = "coefficients", citation: str = "",
                 constant_diffusion: bool = False, kink_radii: Sequence[float] = ()):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        self.d = int(d)
        self._A = diffusion
        self._G = drift
        self._divA = diffusion_divergence
        self._sigma = sigma
        self.name = name
        self.citation = citation
        self.constant_diffusion = constant_diffusion
        # spheres about the origin where the coefficients are not smooth
        self.kink_radii = tuple(kink_radii)

    @property
    def outside_scope(self) -> bool:
        """True for d < 2, which the underlying theory does not cover."""
        return self.d < 2

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_expressions(cls, d: int, diffusion_upper: Sequence[str], drift: Sequence[str],
                         constants: Mapping[str, object] | None = None,
                         name: str = "inline", citation: str = "",
                         kink_radii: Sequence[float] = ()) -> "CoefficientField":
        """Build from expression strings.

        ``diffusion_upper`` lists the upper triangle of ``A`` row by row
        (``a11, a12, ..., a1d, a22, ...``); ``drift`` lists ``g1..gd``.
        """
        exprs = [parse(s, constants) if not isinstance(s, Expression) else s
                 for s in diffusion_upper]
        idx = _upper_to_full(exprs, d)
        gexprs = [parse(s, constants) if not isinstance(s, Expression) else s for s in drift]
        if len(gexprs) != d:
            raise ValueError(f"drift needs {d} components, got {len(gexprs)}")

        def A(X):
            vals = [e(X) for e in exprs]
            out = np.empty((X.shape[0], d, d))
            for (i, j), k in idx.items():
                out[:, i, j] = vals[k]
            return out

        def G(X):
            return np.stack([e(X) for e in gexprs], axis=-1)

        constant = all(e.n_vars == 0 and not e.uses_x for e in exprs)
        return cls(d, A, G, name=name, citation=citation, constant_diffusion=constant,
                   kink_radii=kink_radii)

    @classmethod
    def constant(cls, A, drift: ArrayFn, name: str = "constant-diffusion",
                 citation: str = "") -> "CoefficientField":
        A = np.asarray(A, dtype=float)
        d = A.shape[0]
        if not np.array_equal(A, A.T):
            raise ValueError("diffusion matrix must be symmetric")
        L = cholesky_batch(A[None])[0]
        return cls(d, lambda X: np.broadcast_to(A, (X.shape[0], d, d)).copy(), drift,
                   diffusion_divergence=lambda X: np.zeros((X.shape[0], d)),
                   sigma=lambda X: np.broadcast_to(L, (X.shape[0], d, d)).copy(),
                   name=name, citation=citation, constant_diffusion=True)

    # -- evaluation --------------------------------------------------------

    def A(self, x) -> np.ndarray:
        X, single = as_points(x, self.d)
        out = np.asarray(self._A(X), dtype=float)
        return out[0] if single else out

    def G(self, x) -> np.ndarray:
        X, single = as_points(x, self.d)
        out = np.asarray(self._G(X), dtype=float)
        return out[0] if single else out

    def row_divergence(self, x) -> np.ndarray:
        """``(sum_j d_j a_1j, ..., sum_j d_j a_dj)``."""
        X, single = as_points(x, self.d)
        if self._divA is not None:
            out = np.asarray(self._divA(X), dtype=float)
        else:
            out = np.zeros((X.shape[0], self.d))
            for j in range(self.d):
                dA = fd_partial(self._A, X, j)  # (n, d, d)
                out += dA[:, :, j]
        return out[0] if single else out

    def sigma(self, x) -> np.ndarray:
        return diffusion_factor(self, x)

    def with_drift(self, drift: ArrayFn, name: str | None = None) -> "CoefficientField":
        """Same diffusion, different drift (used for the dual dynamics)."""
        return CoefficientField(self.d, self._A, drift,
                                diffusion_divergence=self._divA, sigma=self._sigma,
                                name=name or self.name, citation=self.citation,
                                constant_diffusion=self.constant_diffusion,
                                kink_radii=self.kink_radii)

    def __repr__(self):
        return f"CoefficientField(d={self.d}, name={self.name!r})"


@dataclass
class DensitySpec:
    """A strictly positive density ``rho`` with optional analytic gradient.

    ``finiteness`` is one of ``"finite" | "infinite" | "unknown"``.
    ``radial_profile`` (``s -> rho(s)`` for a radial density) enables the
    radial volume routines and ``kink_radii`` lists spheres about the origin
    where ``rho`` is continuous but not differentiable.
    ``ball_measure`` is an optional closed form ``r -> mu(B_r)`` and
    ``log_grad`` an optional closed form of ``grad rho / rho``.
    """

    rho: ArrayFn
    grad: ArrayFn | None = None
    name: str = "density"
    finiteness: str = "unknown"
    total_mass: float | None = None
    radial_profile: Callable[[np.ndarray], np.ndarray] | None = None
    kink_radii: tuple = ()
    ball_measure: Callable[[float], float] | None = None
    citation: str = ""
    metadata: dict = field(default_factory=dict)
    log_grad: ArrayFn | None = None

    def __post_init__(self):
        if self.finiteness not in ("finite", "infinite", "unknown"):
            raise ValueError(f"bad finiteness hint {self.finiteness!r}")

    @classmethod
    def from_expression(cls, source: str | Expression,
                        constants: Mapping[str, object] | None = None, **kw) -> "DensitySpec":
        e = source if isinstance(source, Expression) else parse(source, constants)
        kw.setdefault("name", e.source)
        return cls(rho=e, **kw)

    @property
    def grad_mode(self) -> str:
        return "analytic" if self.grad is not None else "finite-difference"

    @property
    def is_radial(self) -> bool:
        return self.radial_profile is not None

    def value(self, X: np.ndarray) -> np.ndarray:
        v = np.asarray(self.rho(X), dtype=float)
        bad = ~(v > 0) | ~np.isfinite(v)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise DensityError(f"density {self.name!r} is {v[k]!r} at x = {X[k]}")
        return v

    def __call__(self, x):
        X, single = as_points(x)
        v = self.value(X)
        return float(v[0]) if single else v

    def gradient(self, X: np.ndarray) -> np.ndarray:
        if self.grad is not None:
            g = np.asarray(self.grad(X), dtype=float)
        else:
            g = fd_gradient(self.value, X)
        if not np.all(np.isfinite(g)):
            raise DensityError(f"non-finite density gradient for {self.name!r}")
        return g

    def log_gradient(self, X: np.ndarray) -> np.ndarray:
        """``grad rho / rho``; a registered ``log_grad`` avoids underflow far out in the tails.

        Without an analytic gradient, ``ln rho`` is differenced directly.
        """
        if self.log_grad is not None:
            g = np.asarray(self.log_grad(X), dtype=float)
            if not np.all(np.isfinite(g)):
                raise DensityError(f"non-finite log-gradient for {self.name!r}")
            return g
        if self.grad is None:
            # differencing ln rho is far more accurate than differencing rho for exponential-type densities
            g = fd_gradient(lambda Y: np.log(self.value(Y)), X)
            if not np.all(np.isfinite(g)):
                raise DensityError(f"non-finite log-gradient for {self.name!r}")
            return g
        return self.gradient(X) / self.value(X)[:, None]

    def as_field(self) -> ScalarField:
        return ScalarField(self.value, self.gradient if self.grad is not None else None,
                           name=self.name)

    def scaled_sum(self, other: "DensitySpec", name: str | None = None) -> "DensitySpec":
        """The density ``self + other`` (sum of measures)."""
        grad = None
        if self.grad is not None and other.grad is not None:
            grad = lambda X: self.gradient(X) + other.gradient(X)  # noqa: E731
        fin = "finite" if self.finiteness == other.finiteness == "finite" else (
            "infinite" if "infinite" in (self.finiteness, other.finiteness) else "unknown")
        return DensitySpec(lambda X: self.value(X) + other.value(X), grad,
                           name=name or f"{self.name} + {other.name}", finiteness=fin,
                           kink_radii=tuple(sorted(set(self.kink_radii) | set(other.kink_radii))))


@dataclass
class DriftDecomposition:
    """``G = beta + perturbation`` with ``beta`` the symmetric drift of ``(A, rho)``."""

    beta: ArrayFn
    perturbation: ArrayFn
    dual_drift: ArrayFn


def _tr_AH(A: np.ndarray, H: np.ndarray) -> np.ndarray:
    d = A.shape[-1]
    acc = np.zeros(A.shape[0])
    for i in range(d):
        for j in range(d):
            acc = acc + A[:, i, j] * H[:, i, j]
    return acc


def _dot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    acc = np.zeros(u.shape[0])
    for i in range(u.shape[1]):
        acc = acc + u[:, i] * v[:, i]
    return acc


def _matvec(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    d = A.shape[-1]
    out = np.zeros(v.shape)
    for i in range(d):
        for j in range(d):
            out[:, i] += A[:, i, j] * v[:, j]
    return out


def apply_L(cf: CoefficientField, f: ScalarField, x) -> np.ndarray:
    """``1/2 sum a_ij d_ij f + sum g_i d_i f`` at ``x`` (a point or an ``(n, d)`` array)."""
    X, single = as_points(x, cf.d)
    out = 0.5 * _tr_AH(cf.A(X), f.hessian(X)) + _dot(cf.G(X), f.gradient(X))
    return float(out[0]) if single else out


def _beta(cf: CoefficientField, rho: DensitySpec, X: np.ndarray) -> np.ndarray:
    return 0.5 * cf.row_divergence(X) + 0.5 * _matvec(cf.A(X), rho.log_gradient(X))


def drift_decomposition(cf: CoefficientField, rho: DensitySpec) -> DriftDecomposition:
    def beta(x):
        X, single = as_points(x, cf.d)
        b = _beta(cf, rho, X)
        if not np.all(np.isfinite(b)):
            raise DensityError("non-finite symmetric drift")
        return b[0] if single else b

    def perturbation(x):
        X, single = as_points(x, cf.d)
        out = cf.G(X) - beta(X)
        return out[0] if single else out

    def dual(x):
        X, single = as_points(x, cf.d)
        out = 2.0 * beta(X) - cf.G(X)
        return out[0] if single else out

    return DriftDecomposition(beta, perturbation, dual)


def apply_L_dual(cf: CoefficientField, rho: DensitySpec, f: ScalarField, x) -> np.ndarray:
    """``1/2 tr(A Hess f) + <2 beta - G, grad f>``: the adjoint operator in L^2(rho dx)."""
    X, single = as_points(x, cf.d)
    drift = 2.0 * _beta(cf, rho, X) - cf.G(X)
    out = 0.5 * _tr_AH(cf.A(X), f.hessian(X)) + _dot(drift, f.gradient(X))
    return float(out[0]) if single else out


def apply_L_symmetric(cf: CoefficientField, rho: DensitySpec, f: ScalarField, x) -> np.ndarray:
    """``1/2 tr(A Hess f) + <beta, grad f>``."""
    X, single = as_points(x, cf.d)
    out = 0.5 * _tr_AH(cf.A(X), f.hessian(X)) + _dot(_beta(cf, rho, X), f.gradient(X))
    return float(out[0]) if single else out


# -- ellipticity and factorisation -------------------------------------------

@dataclass
class EllipticityReport:
    lambda_min: float
    Lambda_max: float
    passed: bool
    n_samples: int
    worst_point: np.ndarray


def ball_points(center, radius: float, n: int, seed: int = 0) -> np.ndarray:
    """``n`` quasi-random points in a closed ball (the centre is always included)."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    d = center.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    if n == 1:
        return center[None, :]
    u = qmc.Halton(d=d + 1, scramble=True, seed=seed).random(n - 1)
    u = np.clip(u, 1e-12, 1 - 1e-12)
    if d == 1:
        pts = (2.0 * u[:, :1] - 1.0) * radius
    else:
        from scipy.special import ndtri
        z = ndtri(u[:, :d])
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        pts = z * (radius * u[:, d:] ** (1.0 / d))
    return np.vstack([center, center + pts])


def check_ellipticity(cf: CoefficientField, center, radius: float, samples: int = 256,
                      seed: int = 0) -> EllipticityReport:
    """Smallest and largest eigenvalue of ``A`` over quasi-random points of a ball."""
    X = ball_points(center, radius, samples, seed)
    A = cf.A(X)
    if not np.all(np.isfinite(A)):
        raise FloatingPointError("diffusion matrix is not finite on the ball")
    ev = np.linalg.eigvalsh(A)
    k = int(np.argmin(ev[:, 0]))
    lo, hi = float(ev[:, 0].min()), float(ev[:, -1].max())
    return EllipticityReport(lo, hi, lo > 0, X.shape[0], X[k])


def cholesky_batch(A: np.ndarray, points: np.ndarray | None = None) -> np.ndarray:
    """Lower-triangular factors of a stack of SPD matrices, failing on the first bad pivot."""
    A = np.asarray(A, dtype=float)
    n, d, _ = A.shape
    L = np.zeros_like(A)
    for j in range(d):
        s = A[:, j, j] - np.sum(L[:, j, :j] ** 2, axis=1)
        bad = ~(s > 0)
        if np.any(bad):
            k = int(np.argmax(bad))
            where = points[k] if points is not None else np.array([k])
            raise FactorizationError(j + 1, where, float(s[k]))
        L[:, j, j] = np.sqrt(s)
        for i in range(j + 1, d):
            L[:, i, j] = (A[:, i, j] - np.sum(L[:, i, :j] * L[:, j, :j], axis=1)) / L[:, j, j]
    return L


def diffusion_factor(cf: CoefficientField, x) -> np.ndarray:
    """Lower-triangular ``sigma(x)`` with ``sigma sigma^T = A(x)``."""
    X, single = as_points(x, cf.d)
    if cf._sigma is not None:
        S = np.asarray(cf._sigma(X), dtype=float)
    else:
        S = cholesky_batch(cf.A(X), X)
    return S[0] if single else S

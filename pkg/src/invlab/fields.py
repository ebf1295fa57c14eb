"""Scalar fields with gradient/Hessian access and the finite-difference engine.

Every field in the package is vectorised: it maps an ``(n, d)`` array of
points to ``(n,)`` values. Analytic derivatives are used when supplied;
otherwise central differences with steps

* ``eps**(1/3) * max(1, |x_i|)`` for first derivatives,
* ``eps**(1/4) * max(1, |x_i|)`` for second derivatives,

which balance truncation against round-off.
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .expr import Expression, parse

__all__ = [
    "ScalarField",
    "as_points",
    "fd_partial",
    "fd_gradient",
    "fd_hessian",
]

EPS = np.finfo(float).eps
H1 = EPS ** (1.0 / 3.0)
H2 = EPS ** 0.25

ArrayFn = Callable[[np.ndarray], np.ndarray]


def as_points(x, d: int | None = None) -> tuple[np.ndarray, bool]:
    """Coerce ``x`` to an ``(n, d)`` array; the flag tells whether it was a single point."""
    X = np.asarray(x, dtype=float)
    single = X.ndim <= 1
    if single:
        X = np.atleast_1d(X)[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected a point or an (n, d) array, got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise ValueError(f"points have dimension {X.shape[1]}, expected {d}")
    return X, single


def _steps(X: np.ndarray, i: int, base: float) -> np.ndarray:
    h = base * np.maximum(1.0, np.abs(X[:, i]))
    # make x + h exactly representable so the divided difference uses the true step
    return (X[:, i] + h) - X[:, i]


def _bcast(h: np.ndarray, ndim: int) -> np.ndarray:
    return h.reshape(h.shape + (1,) * (ndim - 1))


def fd_partial(fun: ArrayFn, X: np.ndarray, i: int) -> np.ndarray:
    """Central difference of ``fun`` along coordinate ``i``; ``fun`` may return any trailing shape."""
    h = _steps(X, i, H1)
    Xp, Xm = X.copy(), X.copy()
    Xp[:, i] += h
    Xm[:, i] -= h
    fp, fm = np.asarray(fun(Xp)), np.asarray(fun(Xm))
    return (fp - fm) / (2.0 * _bcast(h, fp.ndim))


def fd_gradient(fun: ArrayFn, X: np.ndarray) -> np.ndarray:
    return np.stack([fd_partial(fun, X, i) for i in range(X.shape[1])], axis=-1)


def fd_hessian(fun: ArrayFn, X: np.ndarray) -> np.ndarray:
    n, d = X.shape
    H = np.empty((n, d, d))
    f0 = fun(X)
    hs = [_steps(X, i, H2) for i in range(d)]
    for i in range(d):
        Xp, Xm = X.copy(), X.copy()
        Xp[:, i] += hs[i]
        Xm[:, i] -= hs[i]
        H[:, i, i] = (fun(Xp) - 2.0 * f0 + fun(Xm)) / hs[i] ** 2
        for j in range(i + 1, d):
            acc = 0.0
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                Y = X.copy()
                Y[:, i] += si * hs[i]
                Y[:, j] += sj * hs[j]
                acc = acc + si * sj * fun(Y)
            H[:, i, j] = H[:, j, i] = acc / (4.0 * hs[i] * hs[j])
    return H


class ScalarField:
    """A vectorised scalar field with optional analytic gradient and Hessian.

    Parameters
    ----------
    value : callable
        Maps ``(n, d)`` points to ``(n,)`` values.
    gradient, hessian : callable, optional
        Analytic derivatives returning ``(n, d)`` and ``(n, d, d)``. Missing
        ones fall back to central finite differences.
    name : str, optional
        Human-readable label used in reports.
    """

    def __init__(self, value: ArrayFn, gradient: ArrayFn | None = None,
                 hessian: ArrayFn | None = None, name: str | None = None):
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.name = name or getattr(value, "__name__", "field")

    @classmethod
    def from_expression(cls, source: str | Expression,
                        constants: Mapping[str, object] | None = None,
                        name: str | None = None) -> "ScalarField":
        e = source if isinstance(source, Expression) else parse(source, constants)
        return cls(e, name=name or e.source)

    @property
    def has_analytic_gradient(self) -> bool:
        return self._gradient is not None

    def __call__(self, x) -> np.ndarray:
        X, single = as_points(x)
        v = np.asarray(self._value(X), dtype=float)
        return float(v[0]) if single else v

    def value(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self._value(X), dtype=float)

    def gradient(self, X: np.ndarray) -> np.ndarray:
        if self._gradient is not None:
            return np.asarray(self._gradient(X), dtype=float)
        return fd_gradient(self._value, X)

    def hessian(self, X: np.ndarray) -> np.ndarray:
        if self._hessian is not None:
            return np.asarray(self._hessian(X), dtype=float)
        if self._gradient is not None:
            H = fd_gradient(self._gradient, X)
            return 0.5 * (H + np.swapaxes(H, -1, -2))
        return fd_hessian(self._value, X)

    def __repr__(self):
        return f"ScalarField({self.name!r})"

    def linear_combination(self, a: float, other: "ScalarField", b: float) -> "ScalarField":
        """``a * self + b * other``, with derivatives combined the same way."""
        return ScalarField(
            lambda X: a * self.value(X) + b * other.value(X),
            lambda X: a * self.gradient(X) + b * other.gradient(X),
            lambda X: a * self.hessian(X) + b * other.hessian(X),
            name=f"{a}*{self.name} + {b}*{other.name}",
        )

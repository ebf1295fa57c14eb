"""Ensemble simulation of ``dX = sigma(X) dW + G(X) dt`` with exit tracking.

Each path ``p`` draws its Gaussian increments from its own counter-based
stream (Philox keyed by ``(seed, p)``), so an ensemble is bit-identical
however it is batched or spread over workers. All per-step arithmetic is
row-wise, which keeps a path's trajectory independent of its batch mates.

Paths that reach ``|X| >= R_kill`` are frozen and flagged with their exit
time; this finite-radius exit is the stand-in for explosion. Killed paths
contribute zero to every semigroup estimator.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._parallel import ordered_map
from .coefficients import CoefficientField, DensitySpec, _matvec, cholesky_batch, drift_decomposition

__all__ = [
    "SimConfig",
    "EnsembleResult",
    "SurvivalResult",
    "OccupationHistogram",
    "simulate",
    "survival_probability",
    "occupation_histogram",
    "path_generator",
    "ALIVE",
    "EXITED",
    "STALLED",
]

ALIVE, EXITED, STALLED = 0, 1, 2
SCHEMES = ("euler-maruyama", "tamed", "adaptive")
BATCH = 8192
CHUNK = 256


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters.

    ``drift`` selects ``"primal"`` (``G``) or ``"dual"`` (``2 beta - G``, which
    needs a density). The adaptive scheme uses
    ``h_k = h / (1 + |G| + |sigma|_F^2)`` and marks a path stalled once
    ``h_k`` would fall below ``h * floor``. ``level_radii`` requests first
    passage times of the nested spheres ``|x| = r``.
    """

    x: tuple
    t: float
    h: float = 1e-3
    scheme: str = "tamed"
    R_kill: float = 1e3
    paths: int = 1000
    seed: int = 0
    drift: str = "primal"
    floor: float = 1e-6
    level_radii: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))
        object.__setattr__(self, "level_radii", tuple(float(r) for r in self.level_radii))
        if not self.h > 0 or not self.t > 0:
            raise ValueError("h and t must be positive")
        if self.paths < 1:
            raise ValueError("need at least one path")
        if not self.R_kill > math.hypot(*self.x):
            raise ValueError("R_kill must exceed |x|")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.drift not in ("primal", "dual"):
            raise ValueError("drift must be 'primal' or 'dual'")
        if not 0 < self.floor < 1:
            raise ValueError("floor must lie in (0, 1)")

    @property
    def d(self) -> int:
        return len(self.x)

    def replace(self, **kw) -> "SimConfig":
        return SimConfig(**{**asdict(self), **kw})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EnsembleResult:
    config: SimConfig
    terminal: np.ndarray  # (N, d); position at exit for killed paths
    status: np.ndarray  # (N,) ALIVE / EXITED / STALLED
    exit_time: np.ndarray  # (N,) inf unless exited
    level_times: np.ndarray  # (N, J) first passage of the level radii, inf if never
    steps: np.ndarray  # (N,) steps taken
    min_step: float
    provenance: dict = field(default_factory=dict)

    @property
    def alive(self) -> np.ndarray:
        return self.status == ALIVE

    @property
    def n_exited(self) -> int:
        return int(np.count_nonzero(self.status == EXITED))

    @property
    def n_stalled(self) -> int:
        return int(np.count_nonzero(self.status == STALLED))

    def to_csv(self, path) -> None:
        d = self.terminal.shape[1]
        names = {ALIVE: "alive", EXITED: "exited", STALLED: "stalled"}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "status", "exit_time"] + [f"x{i + 1}" for i in range(d)])
            for p in range(self.terminal.shape[0]):
                w.writerow([p, names[int(self.status[p])], repr(float(self.exit_time[p]))]
                           + [repr(float(v)) for v in self.terminal[p]])


def path_generator(seed: int, path: int) -> np.random.Generator:
    """The independent stream of one path."""
    if seed < 0 or path < 0:
        raise ValueError("seed and path index must be non-negative")
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(path)))


class _Normals:
    """Per-path normal draws served ``CHUNK`` steps at a time.

    The buffer is laid out step-major, ``(CHUNK, n, d)``, so that the common
    case of all paths sharing a step index reads a contiguous slab.
    """

    def __init__(self, seed: int, ids: np.ndarray, d: int):
        self.gens = [path_generator(seed, int(i)) for i in ids]
        self.d = d
        self.buf = self._fill()
        self.ptr = np.zeros(len(ids), dtype=np.int64)
        self.synced = True  # every path at the same position

    def _fill(self) -> np.ndarray:
        raw = np.empty((len(self.gens), CHUNK, self.d))
        for i, g in enumerate(self.gens):
            raw[i] = g.standard_normal((CHUNK, self.d))
        return np.ascontiguousarray(raw.transpose(1, 0, 2))

    def take(self, idx: np.ndarray, all_rows: bool) -> np.ndarray:
        if self.synced and all_rows:
            k = int(self.ptr[0])
            z = self.buf[k]
            self.ptr += 1
            if k + 1 == CHUNK:
                # refill into a fresh buffer; ``z`` stays valid
                self.buf = self._fill()
                self.ptr[:] = 0
            return z
        self.synced = False
        z = self.buf[self.ptr[idx], idx]
        self.ptr[idx] += 1
        for i in idx[self.ptr[idx] == CHUNK]:
            self.buf[:, i, :] = self.gens[i].standard_normal((CHUNK, self.d))
            self.ptr[i] = 0
        return z


def _drift_fn(cf: CoefficientField, config: SimConfig, rho: DensitySpec | None):
    if config.drift == "primal":
        return cf.G
    if rho is None:
        raise ValueError("the dual drift needs a density")
    return drift_decomposition(cf, rho).dual_drift


def _row_norm(V: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        acc = V[:, 0] * V[:, 0]
        for i in range(1, V.shape[1]):
            acc = acc + V[:, i] * V[:, i]
        out = np.sqrt(acc)
        big = np.isinf(out) & np.all(np.isfinite(V), axis=1)
        if np.any(big):
            # rescale rows whose squares overflow
            W = V[big]
            m = np.max(np.abs(W), axis=1)
            out[big] = m * np.sqrt(np.sum((W / m[:, None]) ** 2, axis=1))
    return out


def _matvec_const(S: np.ndarray, Z: np.ndarray) -> np.ndarray:
    # explicit sums keep each row's rounding independent of the batch
    out = np.empty_like(Z)
    for i in range(Z.shape[1]):
        acc = S[i, 0] * Z[:, 0]
        for j in range(1, Z.shape[1]):
            if S[i, j] != 0.0:
                acc = acc + S[i, j] * Z[:, j]
        out[:, i] = acc
    return out


def _run_batch(cf, drift, cfg: SimConfig, X0: np.ndarray, ids: np.ndarray, observer=None):
    n, d = X0.shape
    X = X0.copy()
    tau = np.zeros(n)
    status = np.zeros(n, dtype=np.int8)
    exit_t = np.full(n, np.inf)
    steps = np.zeros(n, dtype=np.int64)
    radii = np.asarray(cfg.level_radii, dtype=float)
    levels = np.full((n, radii.size), np.inf)
    levels[_row_norm(X)[:, None] >= radii[None, :]] = 0.0
    normals = _Normals(cfg.seed, ids, d)
    fixed = cfg.scheme != "adaptive"
    n_steps = max(1, int(math.ceil(cfg.t / cfg.h - 1e-9)))
    h_fixed = cfg.t / n_steps
    min_step = h_fixed if fixed else np.inf
    # constant diffusion: one factor for every point
    S_const = cf.sigma(X0[:1])[0] if cf.constant_diffusion else None
    s2_const = float(np.sum(S_const * S_const)) if S_const is not None else None
    active = np.arange(n)
    while active.size:
        all_rows = active.size == n
        Xa = X if all_rows else X[active]
        with np.errstate(over="ignore", invalid="ignore"):
            G = np.asarray(drift(Xa), dtype=float)
        if S_const is None:
            S = cf.sigma(Xa)
            s2 = np.sum(S * S, axis=(1, 2))
        else:
            S, s2 = None, s2_const
        gn = _row_norm(G) if (cfg.scheme != "euler-maruyama") else None
        if fixed:
            dt = h_fixed
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                dt = cfg.h / (1.0 + gn + s2)
            stall = ~(dt >= cfg.h * cfg.floor)
            if np.any(stall):
                status[active[stall]] = STALLED
                keep = ~stall
                active, Xa, G, gn, dt = active[keep], Xa[keep], G[keep], gn[keep], dt[keep]
                if S is not None:
                    S, s2 = S[keep], s2[keep]
                all_rows = False
                if not active.size:
                    break
            dt = np.minimum(dt, cfg.t - tau[active])
            min_step = min(min_step, float(dt.min()))
        Z = normals.take(active, all_rows)
        # a coefficient that overflows marks the path as escaped
        blown = ~np.isfinite(gn if gn is not None else _row_norm(G))
        if S is not None:
            blown |= ~np.isfinite(s2)
        sq = np.sqrt(dt)
        with np.errstate(over="ignore", invalid="ignore"):
            if S is None:
                noise = _matvec_const(S_const, Z)
            else:
                noise = _matvec(S, Z)
            if fixed:
                incr = G * dt + noise * sq
            else:
                incr = G * dt[:, None] + noise * sq[:, None]
            if cfg.scheme == "tamed":
                incr = incr / (1.0 + dt * gn + dt * s2)[:, None]
            Xn = Xa + incr
        if observer is not None:
            observer(Xa, tau[active], np.broadcast_to(dt, (active.size,)), active)
        tau[active] += dt
        steps[active] += 1
        with np.errstate(over="ignore", invalid="ignore"):
            rn = _row_norm(Xn)
        finite = np.isfinite(rn) & ~blown
        if not np.all(finite):
            rn = np.where(finite, rn, np.inf)
            Xn = np.where(finite[:, None], Xn, Xa)
        if radii.size:
            hit = (rn[:, None] >= radii[None, :]) & np.isinf(levels[active])
            rows, cols = np.nonzero(hit)
            levels[active[rows], cols] = tau[active[rows]]
        out = rn >= cfg.R_kill
        if all_rows:
            X = Xn
        else:
            X[active] = Xn
        if np.any(out):
            status[active[out]] = EXITED
            exit_t[active[out]] = tau[active[out]]
        if fixed:
            still = (~out) & (steps[active] < n_steps)
        else:
            still = (~out) & (tau[active] < cfg.t)
        active = active[still]
    return X, status, exit_t, levels, steps, min_step


def simulate(cf: CoefficientField, config: SimConfig, *, rho: DensitySpec | None = None,
             starts: np.ndarray | None = None, observer_factory: Callable | None = None,
             workers: int | None = None) -> EnsembleResult:
    """Simulate ``config.paths`` independent paths from ``config.x``.

    ``starts`` optionally gives one start point per path (used for
    two-stage runs); paths already outside ``B_{R_kill}`` start as exited.
    ``observer_factory(first_path)`` may return a callable
    ``obs(X, t0, dt, idx)`` fed with the pre-step positions and times of
    every batch (``idx`` is relative to ``first_path``); the list of observers is stored in
    ``provenance["observers"]``.

    Raises
    ------
    FactorizationError
        If ``A`` is not positive definite somewhere along a trajectory.
    """
    d = config.d
    if d != cf.d:
        raise ValueError(f"start point has dimension {d}, coefficients have {cf.d}")
    cholesky_batch(cf.A(np.asarray(config.x)[None, :]), np.asarray(config.x)[None, :])
    drift = _drift_fn(cf, config, rho)
    N = config.paths
    if starts is None:
        starts = np.broadcast_to(np.asarray(config.x, dtype=float), (N, d))
    starts = np.asarray(starts, dtype=float)
    if starts.shape != (N, d):
        raise ValueError(f"starts must have shape {(N, d)}")
    bounds = [(a, min(a + BATCH, N)) for a in range(0, N, BATCH)]
    observers = []

    def work(bound):
        a, b = bound
        ids = np.arange(a, b)
        obs = observer_factory(a) if observer_factory is not None else None
        start = starts[a:b]
        pre_out = np.linalg.norm(start, axis=1) >= config.R_kill
        res = _run_batch(cf, drift, config, start, ids, obs)
        if np.any(pre_out):
            X, status, exit_t, levels, steps, ms = res
            status[pre_out] = EXITED
            exit_t[pre_out] = 0.0
        return res, obs

    parts = ordered_map(work, bounds, workers)
    X = np.vstack([p[0][0] for p in parts])
    status = np.concatenate([p[0][1] for p in parts])
    exit_t = np.concatenate([p[0][2] for p in parts])
    levels = np.vstack([p[0][3] for p in parts])
    steps = np.concatenate([p[0][4] for p in parts])
    min_step = min(p[0][5] for p in parts)
    observers = [p[1] for p in parts]
    prov = {"rng": "Philox per path, key = (seed << 64) | path", "seed": config.seed,
            "batch": BATCH, "chunk": CHUNK}
    if observer_factory is not None:
        prov["observers"] = observers
    return EnsembleResult(config, X, status, exit_t, levels, steps, float(min_step), prov)


@dataclass
class SurvivalResult:
    p_hat: float
    se: float
    paths: int
    exited: int
    stalled: int
    sensitivity: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _binomial(k_alive: int, n: int) -> tuple[float, float]:
    p = k_alive / n
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / n)


def survival_probability(cf: CoefficientField, config: SimConfig, *, rho: DensitySpec | None = None,
                         sensitivity: bool = True, workers: int | None = None) -> SurvivalResult:
    """Fraction of paths alive at the horizon, with a row repeated at ``2 R_kill``.

    Comparing the two rows separates truncation at the kill radius from mass
    that is genuinely lost: for a conservative process the second row moves
    toward 1.
    """
    ens = simulate(cf, config, rho=rho, workers=workers)
    p, se = _binomial(int(np.count_nonzero(ens.alive)), config.paths)
    rows = [{"R_kill": config.R_kill, "p_hat": p, "se": se, "exited": ens.n_exited,
             "stalled": ens.n_stalled}]
    if sensitivity:
        cfg2 = config.replace(R_kill=2.0 * config.R_kill)
        ens2 = simulate(cf, cfg2, rho=rho, workers=workers)
        p2, se2 = _binomial(int(np.count_nonzero(ens2.alive)), config.paths)
        rows.append({"R_kill": cfg2.R_kill, "p_hat": p2, "se": se2, "exited": ens2.n_exited,
                     "stalled": ens2.n_stalled})
    return SurvivalResult(p, se, config.paths, ens.n_exited, ens.n_stalled, rows)


@dataclass
class OccupationHistogram:
    edges: list[np.ndarray]
    density: np.ndarray  # normalised over the window
    se: np.ndarray
    window_fraction: float  # share of total path time spent in the window
    window_fraction_se: float
    occupation_time: float  # expected time spent in the window up to the horizon
    groups: int

    def to_csv(self, path) -> None:
        centres = [0.5 * (e[:-1] + e[1:]) for e in self.edges]
        mesh = np.meshgrid(*centres, indexing="ij")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(len(self.edges))] + ["density", "se"])
            for k in np.ndindex(self.density.shape):
                w.writerow([repr(float(m[k])) for m in mesh]
                           + [repr(float(self.density[k])), repr(float(self.se[k]))])


def occupation_histogram(cf: CoefficientField, config: SimConfig, lo: Sequence[float],
                         hi: Sequence[float], bins: int | Sequence[int], *, burn_in: float = 0.0,
                         groups: int = 64, rho: DensitySpec | None = None,
                         workers: int | None = None) -> OccupationHistogram:
    """Time-averaged occupation of the cells of a box window, over all paths.

    Time after ``burn_in`` is accumulated per cell (each step weighted by
    its length). Standard errors come from ``groups`` batch means over path
    indices, which are independent.
    """
    d = config.d
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    nb = np.broadcast_to(np.asarray(bins, dtype=int), (d,))
    edges = [np.linspace(lo[i], hi[i], nb[i] + 1) for i in range(d)]
    n_cells = int(np.prod(nb))
    if burn_in >= config.t:
        raise ValueError("burn_in must be shorter than the horizon")

    class Acc:
        def __init__(self, first: int):
            self.first = first
            self.cells = np.zeros((groups, n_cells))
            self.total = np.zeros(groups)

        def __call__(self, X, t0, dt, idx):
            w = np.clip(t0 + dt - np.maximum(t0, burn_in), 0.0, None)
            g = (self.first + idx) % groups
            np.add.at(self.total, g, w)
            inside = np.all((X >= lo) & (X < hi), axis=1)
            if np.any(inside):
                cell = np.zeros(idx.size, dtype=np.int64)
                for k in range(d):
                    j = ((X[:, k] - lo[k]) / (hi[k] - lo[k]) * nb[k]).astype(np.int64)
                    cell = cell * nb[k] + np.clip(j, 0, nb[k] - 1)
                np.add.at(self.cells, (g[inside], cell[inside]), w[inside])

    ens = simulate(cf, config, rho=rho, observer_factory=Acc, workers=workers)
    accs = ens.provenance.pop("observers")
    cells = sum(a.cells for a in accs)
    total = sum(a.total for a in accs)
    in_window = cells.sum(axis=1)
    frac_g = in_window / np.where(total > 0, total, 1.0)
    frac = float(in_window.sum() / total.sum())
    frac_se = float(frac_g.std(ddof=1) / math.sqrt(groups))
    vol = np.prod([(hi[i] - lo[i]) / nb[i] for i in range(d)])
    norm = in_window.sum() * vol
    dens = cells.sum(axis=0) / norm
    # per-group densities for the standard error
    dg = cells / np.where(in_window > 0, in_window, 1.0)[:, None] / vol
    se = dg.std(axis=0, ddof=1) / math.sqrt(groups)
    occ = frac * (config.t - burn_in)
    return OccupationHistogram(edges, dens.reshape(tuple(nb)), se.reshape(tuple(nb)), frac, frac_se,
                               occ, groups)

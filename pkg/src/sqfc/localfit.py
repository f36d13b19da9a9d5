"""Local-linear kernel-weighted M-estimation of coefficient curves.

At a regime point u0 the coefficients are approximated by
beta_r(u) ~ a_r + b_r'(u - u0) and (a, b) minimise

    sum_i rho(Y_i - sum_r [a_r + (U_i - u0)' b_r] X_ir) K((U_i - u0) / h).

The estimate of beta(u0) is a. The solver works on the rescaled local
design (1, (U_i - u0)/h) (x) X_i so its conditioning does not depend on h.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from ._parallel import pmap
from .errors import (
    AllPointsFailed,
    DimensionMismatch,
    InsufficientSupport,
    InvalidConfig,
    NumericalError,
    OutOfHull,
    RankDeficient,
)
from .kernels import KernelSpec
from .loss import QUANTILE, LossSpec, Quantile


@dataclass(frozen=True)
class FitConfig:
    loss: LossSpec = field(default_factory=lambda: Quantile(0.5))
    kernel: KernelSpec = field(default_factory=KernelSpec)
    h: float = 0.2
    tol: float = 1e-8
    max_iter: int = 200
    eps_smooth: float = 1e-6
    eps_min: float = 1e-10
    min_support: int = None
    cond_max: float = 1e12

    def __post_init__(self):
        if not self.h > 0:
            raise InvalidConfig(f"bandwidth must be positive, got {self.h}")
        if not (self.tol > 0 and self.eps_smooth > 0 and self.eps_min > 0 and self.max_iter > 0):
            raise InvalidConfig("solver tolerances must be positive")

    def support_floor(self, d, k):
        return d * (k + 1) + 1 if self.min_support is None else self.min_support

    def with_h(self, h):
        return FitConfig(self.loss, self.kernel, float(h), self.tol, self.max_iter,
                         self.eps_smooth, self.eps_min, self.min_support, self.cond_max)

    def to_dict(self):
        out = self.loss.to_dict()
        out.update(kernel=self.kernel.family, bandwidth=self.h, tol=self.tol,
                   max_iter=self.max_iter, eps_smooth=self.eps_smooth, eps_min=self.eps_min,
                   min_support=self.min_support)
        return out


@dataclass
class LocalFitResult:
    u0: np.ndarray
    beta_hat: np.ndarray
    slope_hat: np.ndarray
    objective: float
    n_local: int
    iterations: int
    converged: bool
    trace: list = field(default_factory=list, repr=False)


def local_design(X, U, u0, h):
    """Rows (1, (U_i - u0)/h) (x) X_i, ordered [X, t_1 X, ..., t_k X]."""
    T = (U - u0) / h
    return np.hstack([X] + [X * T[:, [l]] for l in range(T.shape[1])])


def fit_arrays(X, y, U, u0, cfg, exclude=None, trace=False):
    """Fit at one regime point from raw arrays; ``exclude`` lists row
    indices given zero weight (used for held-out cross-validation)."""
    u0 = np.ascontiguousarray(u0, dtype=float).reshape(-1)
    U = np.ascontiguousarray(U, dtype=float)
    n, d = X.shape
    k = U.shape[1]
    if u0.size != k:
        raise DimensionMismatch(f"regime point has length {u0.size}, expected {k}")
    if not np.all(np.isfinite(u0)):
        raise InvalidConfig("regime point must be finite")
    if cfg.kernel.dim != k:
        raise DimensionMismatch(f"kernel dimension {cfg.kernel.dim} != regime dimension {k}")
    core = _backend.impl
    w = core.local_weights(U, u0, cfg.h, cfg.kernel.family_id)
    if exclude is not None:
        w[exclude] = 0.0
    idx = np.flatnonzero(w > 0)
    floor = cfg.support_floor(d, k)
    if idx.size < floor:
        raise InsufficientSupport(
            f"{idx.size} observations with positive weight at u0={u0.tolist()}, need {floor}")
    wl = w[idx]
    Z = local_design(X[idx], U[idx], u0, cfg.h)
    G = (Z * wl[:, None]).T @ Z
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > cfg.cond_max:
        raise RankDeficient(f"local design is rank deficient at u0={u0.tolist()} (cond={cond:.3g})")
    theta, obj, iters, conv, status, hist = core.irls(
        Z, y[idx], wl, cfg.loss.code, cfg.loss.param, cfg.tol, cfg.max_iter,
        cfg.eps_smooth, cfg.eps_min, trace)
    if status and not np.all(np.isfinite(theta)):
        raise RankDeficient(f"linear solve broke down at u0={u0.tolist()}")
    if cfg.loss.code == QUANTILE:
        # IRLS lands near the optimum; pivoting over basic solutions finishes exactly
        th_v, obj_v, _, optimal = core.vertex_polish(
            Z, y[idx], wl, cfg.loss.param, theta, 20 * Z.shape[1] + 50)
        if obj_v <= obj:
            theta, obj = th_v, obj_v
            conv = conv or optimal
    return LocalFitResult(
        u0=u0,
        beta_hat=theta[:d].copy(),
        slope_hat=theta[d:].reshape(k, d).T / cfg.h,
        objective=float(obj),
        n_local=int(idx.size),
        iterations=int(iters),
        converged=bool(conv and not status),
        trace=list(hist),
    )


def fit_at(ds, u0, cfg, trace=False):
    """Local-linear M-estimate of beta(u0) on a dataset."""
    return fit_arrays(ds.X, ds.y, ds.U, u0, cfg, trace=trace)


def default_grid(ds, n=100, lo=0.025, hi=0.975):
    """``n`` equally spaced points per axis between sample quantiles of U
    (tensor product when k > 1), in lexicographic order."""
    axes = [np.linspace(*np.quantile(ds.U[:, l], [lo, hi]), n) for l in range(ds.k)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def _as_grid(grid, k):
    g = np.asarray(grid, dtype=float)
    if g.ndim == 1:
        g = g[:, None] if k == 1 else g[None, :]
    if g.shape[1] != k:
        raise DimensionMismatch(f"grid points have dimension {g.shape[1]}, expected {k}")
    if g.shape[0] == 0:
        raise InvalidConfig("grid is empty")
    return g


@dataclass
class CoefficientCurve:
    """Per-point fits over a grid of regime points.

    ``results[j]`` is ``None`` when the fit at ``grid[j]`` failed; the error
    class name is then in ``errors[j]``.
    """

    grid: np.ndarray
    results: list
    errors: list
    x_names: tuple
    config: dict = field(default_factory=dict)
    bands: object = None

    @property
    def d(self):
        return len(self.x_names)

    @property
    def k(self):
        return self.grid.shape[1]

    @property
    def ok(self):
        return np.array([r is not None for r in self.results])

    @property
    def beta(self):
        out = np.full((len(self.results), self.d), np.nan)
        for j, r in enumerate(self.results):
            if r is not None:
                out[j] = r.beta_hat
        return out

    def to_records(self):
        recs = []
        for u0, r, err in zip(self.grid, self.results, self.errors):
            if r is None:
                recs.append({"u0": u0.tolist(), "beta": None, "slope": None, "n_local": 0,
                             "converged": False, "error": err})
            else:
                recs.append({"u0": u0.tolist(), "beta": r.beta_hat.tolist(),
                             "slope": r.slope_hat.tolist(), "n_local": r.n_local,
                             "converged": r.converged, "iterations": r.iterations,
                             "objective": r.objective})
        return recs

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_records(), fh, indent=1)

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([*(f"u{l + 1}" for l in range(self.k)), "coefficient", "estimate",
                        *(f"slope_u{l + 1}" for l in range(self.k)), "n_local", "converged"])
            for u0, r in zip(self.grid, self.results):
                if r is None:
                    continue
                for j, name in enumerate(self.x_names):
                    w.writerow([*map(repr, u0.tolist()), name, repr(float(r.beta_hat[j])),
                                *map(repr, r.slope_hat[j].tolist()), r.n_local, int(r.converged)])

    @classmethod
    def from_records(cls, records, x_names, config=None):
        grid = np.array([rec["u0"] for rec in records], dtype=float)
        results, errors = [], []
        for rec in records:
            if rec.get("beta") is None:
                results.append(None)
                errors.append(rec.get("error", "unknown"))
            else:
                results.append(LocalFitResult(
                    u0=np.array(rec["u0"], dtype=float),
                    beta_hat=np.array(rec["beta"], dtype=float),
                    slope_hat=np.array(rec["slope"], dtype=float),
                    objective=float(rec.get("objective", np.nan)),
                    n_local=int(rec["n_local"]),
                    iterations=int(rec.get("iterations", 0)),
                    converged=bool(rec["converged"])))
                errors.append(None)
        return cls(grid, results, errors, tuple(x_names), dict(config or {}))


def fit_curve(ds, grid, cfg, threads=None):
    """Apply ``fit_at`` over a grid; failing points are recorded, not fatal."""
    grid = _as_grid(grid, ds.k)
    X, y, U = ds.X, ds.y, ds.U

    def one(u0):
        try:
            return fit_arrays(X, y, U, u0, cfg), None
        except NumericalError as exc:
            return None, type(exc).__name__

    out = pmap(one, list(grid), threads)
    results = [r for r, _ in out]
    errors = [e for _, e in out]
    if all(r is None for r in results):
        raise AllPointsFailed(f"all {len(results)} grid points failed ({errors[0]})")
    return CoefficientCurve(grid, results, errors, ds.x_names, cfg.to_dict())


def coefficients_at(curve, u):
    """Coefficient vector at ``u``: linear interpolation between bracketing
    grid points when k = 1, nearest grid point otherwise."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != curve.k:
        raise DimensionMismatch(f"regime point has length {u.size}, expected {curve.k}")
    ok = curve.ok
    grid = curve.grid[ok]
    beta = curve.beta[ok]
    if grid.shape[0] == 0:
        raise AllPointsFailed("curve has no fitted points")
    lo, hi = grid.min(axis=0), grid.max(axis=0)
    if np.any(u < lo - 1e-12) or np.any(u > hi + 1e-12):
        raise OutOfHull(f"u={u.tolist()} lies outside the grid hull")
    hit = np.flatnonzero(np.all(grid == u, axis=1))
    if hit.size:
        return beta[hit[0]].copy()
    if curve.k == 1:
        g = grid[:, 0]
        order = np.argsort(g)
        return np.array([np.interp(u[0], g[order], beta[order, j]) for j in range(beta.shape[1])])
    j = int(np.argmin(np.sum((grid - u) ** 2, axis=1)))
    return beta[j].copy()


def predict(curve, x, u):
    """x' beta_hat(u)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != curve.d:
        raise DimensionMismatch(f"x has length {x.size}, expected {curve.d}")
    return float(x @ coefficients_at(curve, u))


def curve_residuals(curve, ds):
    """Y_i - X_i' beta_hat(U_i) over usable rows, coefficients taken from the
    curve; rows whose U_i falls outside the grid hull get NaN."""
    ok = curve.ok
    grid, beta = curve.grid[ok], curve.beta[ok]
    U, X, y = ds.U, ds.X, ds.y
    if curve.k == 1:
        g = grid[:, 0]
        order = np.argsort(g)
        B = np.column_stack([np.interp(U[:, 0], g[order], beta[order, j]) for j in range(curve.d)])
        inside = (U[:, 0] >= g.min()) & (U[:, 0] <= g.max())
    else:
        d2 = ((U[:, None, :] - grid[None, :, :]) ** 2).sum(axis=2)
        B = beta[np.argmin(d2, axis=1)]
        inside = np.all((U >= grid.min(axis=0)) & (U <= grid.max(axis=0)), axis=1)
    res = y - np.sum(X * B, axis=1)
    res[~inside] = np.nan
    return res

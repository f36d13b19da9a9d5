"""Plug-in asymptotic variances and pointwise confidence bands.

For a local-linear M-estimate at u0 the covariance is estimated by

    C(u0) = V0 / (f(u0) n h^k) * Phi^-1 Sigma Phi^-1,

with Phi the curvature and Sigma the score variance of the loss given
(X, U = u0), f the design density and V0 = nu0 / mu0^2 in the interior.
Within h*M of the sample boundary V0 becomes the boundary constant lambda11
and f is corrected for the truncated kernel mass. No bias correction is
applied; undersmoothing (about 0.8 times the selected h) is the
recommended way to keep the omitted bias small.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InsufficientSupport, InvalidConfig, SingularPhi, TooFewResiduals
from .kernels import KernelSpec, boundary_matrices, moments, weights
from .localfit import curve_residuals
from .loss import HUBER, QUANTILE, SQUARED

MIN_RESIDUALS = 30
COND_MAX = 1e12


@dataclass(frozen=True)
class VarianceMode:
    """``independent`` pools all residuals into one density at zero;
    ``conditional`` estimates f(0 | chosen covariates) per observation."""

    variant: str = "independent"
    subset: tuple = ()

    def __post_init__(self):
        if self.variant not in ("independent", "conditional"):
            raise InvalidConfig(f"unknown variance mode {self.variant!r}")
        object.__setattr__(self, "subset", tuple(self.subset))
        if self.variant == "conditional" and not 1 <= len(self.subset) <= 2:
            raise InvalidConfig("conditional mode needs one or two conditioning columns")
        if self.variant == "independent" and self.subset:
            raise InvalidConfig("independent mode takes no conditioning columns")

    def __str__(self):
        if self.variant == "independent":
            return "independent"
        return "conditional:" + ",".join(str(c) for c in self.subset)


def Independent():
    return VarianceMode("independent")


def Conditional(subset):
    return VarianceMode("conditional", tuple(subset))


def parse_mode(text):
    """``independent`` or ``conditional:COL[,COL]``; integer tokens are
    positions in the design (0 = first column)."""
    text = text.strip()
    if text == "independent":
        return Independent()
    if text.startswith("conditional:"):
        cols = [c.strip() for c in text.split(":", 1)[1].split(",") if c.strip()]
        return Conditional([int(c) if c.lstrip("-").isdigit() else c for c in cols])
    raise InvalidConfig(f"cannot parse variance mode {text!r}")


# --- building blocks -------------------------------------------------------


def _kernel_weights(U, u0, h, kernel):
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    return weights(kernel, (U - u0) / h)


def density_at(ds, u0, h, kernel=None):
    """Kernel estimate of the design density of U at u0."""
    kernel = kernel or KernelSpec(dim=ds.k)
    w = _kernel_weights(ds.U, u0, h, kernel)
    return float(w.sum() / (ds.n_effective * h**ds.k))


def _nw_outer(X, w, scale=None):
    s = w if scale is None else w * scale
    total = w.sum()
    if not total > 0:
        raise InsufficientSupport("no observation has positive kernel weight")
    M = (X * s[:, None]).T @ X / total
    return 0.5 * (M + M.T)


def design_moment(ds, u0, h, kernel=None):
    """Nadaraya-Watson estimate of E(X X' | U = u0)."""
    kernel = kernel or KernelSpec(dim=ds.k)
    w = _kernel_weights(ds.U, u0, h, kernel)
    return _nw_outer(ds.X, w)


def silverman(x):
    """Gaussian-reference bandwidth 0.9 min(sd, IQR/1.34) n^(-1/5); when
    one spread measure is zero the other is used."""
    x = np.asarray(x, dtype=float)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = [s for s in (sd, (q75 - q25) / 1.34) if s > 0]
    return 0.9 * min(spread) * x.size ** (-0.2) if spread else 0.0


def _gauss(z):
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def residual_density_zero(residuals, mode=None, aux=None):
    """Density of the errors at zero.

    Independent mode returns a scalar Gaussian KDE at 0. Conditional mode
    returns, per observation, the product-kernel estimate of f(0 | aux_i);
    aux columns with zero spread carry no information and are skipped.
    """
    mode = mode or Independent()
    e = np.asarray(residuals, dtype=float).reshape(-1)
    if e.size < MIN_RESIDUALS:
        raise TooFewResiduals(f"{e.size} residuals, need at least {MIN_RESIDUALS}")
    if not np.all(np.isfinite(e)):
        raise InvalidConfig("residuals must be finite")
    b0 = silverman(e)
    if not b0 > 0:
        raise SingularPhi("residuals have zero spread; the error density at 0 is not estimable")
    k0 = _gauss(e / b0) / b0
    if mode.variant == "independent":
        return float(k0.mean())
    A = np.asarray(aux, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.shape[0] != e.size:
        raise InvalidConfig(f"aux has {A.shape[0]} rows for {e.size} residuals")
    W = np.ones((e.size, e.size))
    for col in A.T:
        b = silverman(col)
        if b > 0:
            W *= _gauss((col[:, None] - col[None, :]) / b)
    return (W @ k0) / W.sum(axis=1)


def independence_diagnostic(residuals, columns, threshold=0.1):
    """Absolute Pearson and Spearman correlations of |residual| with each
    column; advisory only."""
    a = np.abs(np.asarray(residuals, dtype=float))
    out = []
    for name, col in columns.items():
        col = np.asarray(col, dtype=float)
        ok = np.isfinite(a) & np.isfinite(col)
        if ok.sum() < 3 or np.ptp(col[ok]) == 0:
            continue
        p = abs(float(stats.pearsonr(a[ok], col[ok])[0]))
        s = abs(float(stats.spearmanr(a[ok], col[ok])[0]))
        out.append({"column": name, "pearson": p, "spearman": s,
                    "flagged": bool(max(p, s) > threshold)})
    return out


def boundary_offsets(ds, u0, h, kernel):
    """c_l = distance (in bandwidths) from u0 to the nearer edge of the
    sample range on axis l, capped at the kernel support."""
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    lo, hi = ds.U.min(axis=0), ds.U.max(axis=0)
    c = np.minimum(u0 - lo, hi - u0) / h
    return np.clip(c, 0.0, kernel.support)


def variance_constants(ds, u0, h, kernel):
    """(V0, mass) where mass = int of K over the truncated window."""
    c = boundary_offsets(ds, u0, h, kernel)
    mom = moments(kernel)
    if np.all(c >= kernel.support):
        return mom.nu0 / mom.mu0**2, mom.mu0
    bm = boundary_matrices(kernel, c)
    return bm.lambda11, float(bm.delta_c[0, 0])


# --- bands -----------------------------------------------------------------


@dataclass
class BandResult:
    grid: np.ndarray
    beta: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    x_names: tuple
    level: float
    mode: str
    bandwidth: float
    boundary: np.ndarray
    covariances: list = field(default_factory=list, repr=False)
    diagnostic: list = field(default_factory=list)

    def to_records(self):
        recs = []
        for j, u0 in enumerate(self.grid):
            recs.append({
                "u0": u0.tolist(),
                "beta": self.beta[j].tolist(),
                "se": self.se[j].tolist(),
                "lower": self.lower[j].tolist(),
                "upper": self.upper[j].tolist(),
                "boundary": bool(self.boundary[j]),
            })
        return recs

    def to_dict(self):
        return {"level": self.level, "mode": self.mode, "bandwidth": self.bandwidth,
                "x_names": list(self.x_names), "points": self.to_records(),
                "independence_diagnostic": self.diagnostic}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_finite_or_none(self.to_dict()), fh, indent=1)

    def to_csv(self, path):
        k = self.grid.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([*(f"u{l + 1}" for l in range(k)), "coefficient", "estimate", "se", "lo", "hi"])
            for j, u0 in enumerate(self.grid):
                if not np.all(np.isfinite(self.beta[j])):
                    continue
                for r, name in enumerate(self.x_names):
                    w.writerow([*map(repr, u0.tolist()), name, repr(float(self.beta[j, r])),
                                repr(float(self.se[j, r])), repr(float(self.lower[j, r])),
                                repr(float(self.upper[j, r]))])


def _finite_or_none(obj):
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_or_none(v) for v in obj]
    return obj


def _aux_matrix(ds, subset):
    cols = []
    for c in subset:
        if isinstance(c, (int, np.integer)):
            if not 0 <= c < ds.d:
                raise InvalidConfig(f"conditioning column index {c} out of range")
            cols.append(ds.X[:, c])
        elif c in ds.x_names:
            cols.append(ds.X[:, ds.x_names.index(c)])
        elif c in ds.columns:
            cols.append(ds.columns[c][ds.usable])
        else:
            raise InvalidConfig(f"unknown conditioning column {c!r}")
    return np.column_stack(cols)


def _inv_checked(M, what):
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise SingularPhi(f"{what} is numerically singular (cond={cond:.3g})")
    return np.linalg.inv(M)


def _sandwich_parts(loss, X, e, w, okres, c=None):
    """(Phi, Sigma) at one grid point for the Huber and squared losses, up
    to a common factor that cancels in the sandwich."""
    wr = w * okres
    ee = np.where(okres, e, 0.0)
    if loss == HUBER:
        phi = _nw_outer(X, wr, (np.abs(ee) <= c) / c)
        sig = _nw_outer(X, wr, np.clip(ee / c, -1.0, 1.0) ** 2)
        return phi, sig
    phi = _nw_outer(X, wr)
    sig = _nw_outer(X, wr, ee * ee)
    return phi, sig


def bands(curve, ds, cfg, mode=None, level=0.95):
    """Pointwise bands for a fitted curve; dispatches on the loss."""
    mode = mode or Independent()
    if not 0.0 < level < 1.0:
        raise InvalidConfig(f"level must lie in (0, 1), got {level}")
    if curve.k != ds.k or curve.d != ds.d:
        raise InvalidConfig("curve and dataset dimensions disagree")
    loss = cfg.loss
    if loss.code != QUANTILE and mode.variant != "independent":
        raise InvalidConfig("conditional mode applies to quantile fits only")
    kernel, h = cfg.kernel, cfg.h
    X, U = ds.X, ds.U
    e = curve_residuals(curve, ds)
    okres = np.isfinite(e)
    if okres.sum() < MIN_RESIDUALS:
        raise TooFewResiduals(f"{int(okres.sum())} residuals, need at least {MIN_RESIDUALS}")
    n_eff = ds.n_effective
    z = float(stats.norm.ppf(0.5 * (1.0 + level)))

    fdens = None
    if loss.code == QUANTILE:
        if np.max(np.abs(e[okres])) <= 1e-10 * np.std(ds.y):
            # only rounding noise is left: the error density at 0 is unbounded
            raise SingularPhi("residuals vanish; the error density at 0 is not estimable")
        if mode.variant == "independent":
            f0 = residual_density_zero(e[okres], mode)
        else:
            fdens = np.zeros(e.size)
            fdens[okres] = residual_density_zero(e[okres], mode, _aux_matrix(ds, mode.subset)[okres])
            fdens[~okres] = np.nan

    m, d = curve.grid.shape[0], curve.d
    se = np.full((m, d), np.nan)
    beta = curve.beta
    is_boundary = np.zeros(m, dtype=bool)
    covs = []
    for j, u0 in enumerate(curve.grid):
        if curve.results[j] is None:
            covs.append(None)
            continue
        w = _kernel_weights(U, u0, h, kernel)
        V0, mass = variance_constants(ds, u0, h, kernel)
        is_boundary[j] = mass < moments(kernel).mu0 - 1e-12
        fu = w.sum() / (n_eff * h**ds.k) * moments(kernel).mu0 / mass
        if not fu > 0:
            raise InsufficientSupport(f"no observation has positive kernel weight at u0={u0.tolist()}")
        if loss.code == QUANTILE:
            tau = loss.param
            if fdens is None:
                omega = _nw_outer(X, w)
                C = tau * (1 - tau) / f0**2 * _inv_checked(omega, "design moment")
            else:
                omega = _nw_outer(X, w)
                wr = np.where(okres, w, 0.0)
                phi = 2.0 * _nw_outer(X, wr, np.nan_to_num(fdens))
                pinv = _inv_checked(phi, "curvature matrix")
                C = 4 * tau * (1 - tau) * pinv @ omega @ pinv
        else:
            phi, sig = _sandwich_parts(loss.code, X, e, w, okres, loss.param)
            pinv = _inv_checked(phi, "curvature matrix")
            C = pinv @ sig @ pinv
        C = V0 / (fu * n_eff * h**ds.k) * C
        C = 0.5 * (C + C.T)
        covs.append(C)
        se[j] = np.sqrt(np.clip(np.diag(C), 0.0, None))

    cols = {name: X[:, r] for r, name in enumerate(ds.x_names)}
    cols.update({name: U[:, l] for l, name in enumerate(ds.regimes)})
    diag = independence_diagnostic(e, cols) if loss.code == QUANTILE else []
    res = BandResult(
        grid=curve.grid.copy(), beta=beta, se=se, lower=beta - z * se, upper=beta + z * se,
        x_names=curve.x_names, level=float(level), mode=str(mode), bandwidth=float(h),
        boundary=is_boundary, covariances=covs, diagnostic=diag)
    curve.bands = res
    return res


def quantile_bands(curve, ds, cfg, mode=None, level=0.95):
    """Bands for a check-loss fit."""
    if cfg.loss.code != QUANTILE:
        raise InvalidConfig("quantile_bands needs a quantile fit")
    return bands(curve, ds, cfg, mode, level)


def robust_bands(curve, ds, cfg, level=0.95):
    """Sandwich bands for a Huber-type fit."""
    if cfg.loss.code != HUBER:
        raise InvalidConfig("robust_bands needs a Huber-type fit")
    return bands(curve, ds, cfg, Independent(), level)


def least_squares_bands(curve, ds, cfg, level=0.95):
    """Sandwich bands for a squared-loss fit."""
    if cfg.loss.code != SQUARED:
        raise InvalidConfig("least_squares_bands needs a squared-loss fit")
    return bands(curve, ds, cfg, Independent(), level)

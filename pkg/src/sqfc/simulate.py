"""Synthetic lattice data with known coefficient curves, and a Monte Carlo
harness that scores estimates against the truth.

Fields are finite-range moving averages of iid Gaussian innovations over a
(2l+1)^2 window, so they are stationary and independent beyond lag 2l. The
regime field is pushed through the normal CDF, which makes each U_i
exactly Uniform(0, 1). Randomness comes from counter-based Philox streams
keyed by (seed, replication, stream), so a replication is reproducible on
its own and independent of the order in which replications run.
"""

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, special, stats

from ._parallel import pmap
from .dataset import from_arrays
from .errors import InvalidConfig, NumericalError
from .localfit import FitConfig, default_grid, fit_curve

# Philox stream ids
_S_REGIME, _S_ERROR, _S_COVARIATE = 0, 1, 16


# --- coefficient library ---------------------------------------------------

_COEF_DEFAULTS = {
    "constant": (1.0,),
    "linear": (0.0, 1.0),
    "sine": (1.0, 1.0),
    "quadratic": (0.0, 0.0, 4.0),
}


@dataclass(frozen=True)
class CoefFunction:
    """constant(a) = a; linear(a, b) = a + b u; sine(amp, freq) =
    amp sin(2 pi freq u); quadratic(a, b, c) = a + b u + c (u - 1/2)^2."""

    name: str
    params: tuple = ()

    def __post_init__(self):
        if self.name not in _COEF_DEFAULTS:
            raise InvalidConfig(f"unknown coefficient function {self.name!r}")
        p = tuple(float(v) for v in self.params) or _COEF_DEFAULTS[self.name]
        if len(p) != len(_COEF_DEFAULTS[self.name]):
            raise InvalidConfig(f"{self.name} takes {len(_COEF_DEFAULTS[self.name])} parameters")
        object.__setattr__(self, "params", p)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        p = self.params
        if self.name == "constant":
            return np.full_like(u, p[0])
        if self.name == "linear":
            return p[0] + p[1] * u
        if self.name == "sine":
            return p[0] * np.sin(2.0 * np.pi * p[1] * u)
        return p[0] + p[1] * u + p[2] * (u - 0.5) ** 2

    def mean_uniform(self):
        """E beta(U) for U ~ Uniform(0, 1)."""
        return float(integrate.quad(lambda t: float(self(t)), 0.0, 1.0, epsabs=1e-13)[0])

    def __str__(self):
        return f"{self.name}:" + ":".join(repr(v) for v in self.params)


def parse_coef(text):
    """``sine`` or ``sine:1.5:0.5`` style."""
    parts = text.strip().split(":")
    return CoefFunction(parts[0], tuple(float(t) for t in parts[1:]))


# --- errors ------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorSpec:
    """gaussian(sigma), student_t(df), or heteroscedastic(sigma) with scale
    sigma * (0.5 + u). Draws are shifted so the tau-quantile is zero."""

    kind: str = "gaussian"
    param: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "student_t", "heteroscedastic"):
            raise InvalidConfig(f"unknown error distribution {self.kind!r}")
        if self.kind == "student_t" and not self.param > 0:
            raise InvalidConfig("student_t needs df > 0")
        if self.kind != "student_t" and not self.param >= 0:
            raise InvalidConfig("error scale must be non-negative")

    def base_quantile(self, tau):
        if self.kind == "student_t":
            return float(stats.t.ppf(tau, self.param))
        return float(stats.norm.ppf(tau))

    def scale(self, u):
        if self.kind == "heteroscedastic":
            return self.param * (0.5 + np.asarray(u, dtype=float))
        if self.kind == "gaussian":
            return np.full(np.shape(u), float(self.param))
        return np.ones(np.shape(u))

    def draw(self, rng, u, tau):
        z = rng.standard_t(self.param, size=u.shape) if self.kind == "student_t" \
            else rng.standard_normal(size=u.shape)
        return self.scale(u) * (z - self.base_quantile(tau))

    def cdf(self, x, tau, u=0.5):
        """P(eps <= x | U = u)."""
        s = float(self.scale(np.asarray(u)))
        if s == 0:
            return float(x >= 0)
        z = x / s + self.base_quantile(tau)
        if self.kind == "student_t":
            return float(stats.t.cdf(z, self.param))
        return float(stats.norm.cdf(z))

    def mean(self, tau):
        """E eps (for U ~ Uniform(0, 1))."""
        if self.kind == "student_t" and self.param <= 1:
            return math.nan
        shift = -self.base_quantile(tau)
        return float(np.mean(self.scale(0.5)) * shift)

    def __str__(self):
        return f"{self.kind}:{self.param!r}"


def parse_error(text):
    parts = text.strip().split(":")
    return ErrorSpec(parts[0], float(parts[1]) if len(parts) > 1 else 1.0)


# --- trends -------------------------------------------------------------------

# cubic monomials in s = (s1, s2)
_MONOMIALS = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3))
_DEFAULT_TRENDS = {
    "y": (0.0, 2.0, -1.0, 0.0, 3.0, 0.0, -2.0, 0.0, 0.0, 1.0),
    "x": (0.0, -1.0, 0.0, 0.0, 0.0, 2.0, 1.0, -1.0, 0.0, 0.0),
    "u": (0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.5),
}


def cubic_trend(coef, s1, s2):
    return sum(c * s1**a * s2**b for c, (a, b) in zip(coef, _MONOMIALS))


@dataclass(frozen=True)
class TrendSpec:
    """Cubic polynomial trends added to the response, every covariate and
    the regime variable; ``amplitude`` scales the built-in shapes."""

    amplitude: float = 1.0
    y: tuple = _DEFAULT_TRENDS["y"]
    x: tuple = _DEFAULT_TRENDS["x"]
    u: tuple = _DEFAULT_TRENDS["u"]


# --- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class DgpConfig:
    """Data-generating process. ``beta[0]`` multiplies the intercept when
    ``intercept`` is true; every further entry gets its own covariate field."""

    shape: tuple = (30, 30)
    beta: tuple = (CoefFunction("sine"), CoefFunction("linear"))
    ma_range: int = 2
    error: ErrorSpec = field(default_factory=ErrorSpec)
    tau: float = 0.5
    intercept: bool = True
    trend: TrendSpec = None
    seed: int = 0

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 2 or min(shape) < 1:
            raise InvalidConfig(f"shape must be two positive integers, got {self.shape}")
        object.__setattr__(self, "shape", shape)
        beta = tuple(b if isinstance(b, CoefFunction) else parse_coef(b) for b in self.beta)
        if not beta:
            raise InvalidConfig("at least one coefficient function is required")
        object.__setattr__(self, "beta", beta)
        if int(self.ma_range) != self.ma_range or self.ma_range < 0:
            raise InvalidConfig(f"ma_range must be a non-negative integer, got {self.ma_range}")
        if not 0.0 < self.tau < 1.0:
            raise InvalidConfig(f"tau must lie in (0, 1), got {self.tau}")

    @property
    def n_covariates(self):
        return len(self.beta) - (1 if self.intercept else 0)

    def to_dict(self):
        return {
            "shape": list(self.shape),
            "beta": [str(b) for b in self.beta],
            "ma_range": self.ma_range,
            "error": str(self.error),
            "tau": self.tau,
            "intercept": self.intercept,
            "trend": None if self.trend is None else {
                "amplitude": self.trend.amplitude, "y": list(self.trend.y),
                "x": list(self.trend.x), "u": list(self.trend.u)},
            "seed": self.seed,
        }


def _rng(seed, rep, stream):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep), int(stream)])))


def ma_field(rng, shape, ell):
    """Standardised finite-range moving average of iid N(0, 1) innovations."""
    w = 2 * ell + 1
    Z = rng.standard_normal((shape[0] + 2 * ell, shape[1] + 2 * ell))
    if ell == 0:
        return Z
    S = np.lib.stride_tricks.sliding_window_view(Z, (w, w)).sum(axis=(-1, -2))
    return S / w


@dataclass
class GroundTruth:
    """Known structure of a simulated dataset.

    ``beta(u)`` evaluates the true coefficients at regime values in the
    dataset's own units. With trends, the observed data carry the trends
    while ``latent`` holds the mean-zero stationary fields; the regime is
    then centred (U - 1/2) and the intercept shifted by -E[Y], which is the
    curve that detrended data identify.
    """

    config: DgpConfig
    regime_offset: float = 0.0
    intercept_offset: float = 0.0
    latent: object = None
    trends: dict = field(default_factory=dict)

    def beta(self, u):
        u = np.asarray(u, dtype=float).reshape(-1) + self.regime_offset
        B = np.column_stack([f(u) for f in self.config.beta])
        if self.config.intercept:
            B[:, 0] -= self.intercept_offset
        return B


def generate(config, rep=0):
    """Simulate one dataset; returns ``(dataset, truth)``."""
    n1, n2 = config.shape
    ell = config.ma_range
    coords = np.array([(i, j) for i in range(1, n1 + 1) for j in range(1, n2 + 1)], dtype=np.int64)
    u = special.ndtr(ma_field(_rng(config.seed, rep, _S_REGIME), config.shape, ell).reshape(-1))
    Xc = np.column_stack([
        ma_field(_rng(config.seed, rep, _S_COVARIATE + j), config.shape, ell).reshape(-1)
        for j in range(config.n_covariates)
    ]) if config.n_covariates else np.zeros((u.size, 0))
    eps = config.error.draw(_rng(config.seed, rep, _S_ERROR), u, config.tau)
    design = np.hstack([np.ones((u.size, 1)), Xc]) if config.intercept else Xc
    B = np.column_stack([f(u) for f in config.beta])
    y = np.sum(B * design, axis=1) + eps

    x_names = [f"x{j + 1}" for j in range(config.n_covariates)]
    if config.trend is None:
        ds = from_arrays(y, Xc, u, coords=coords, shape=config.shape, x_names=x_names,
                         u_names=["u"], intercept=config.intercept)
        return ds, GroundTruth(config)

    # centre the stationary parts so the trend carries every mean
    y_mean = (config.beta[0].mean_uniform() if config.intercept else 0.0) + config.error.mean(config.tau)
    u_lat, y_lat = u - 0.5, y - y_mean
    latent = from_arrays(y_lat, Xc, u_lat, coords=coords, shape=config.shape, x_names=x_names,
                         u_names=["u"], intercept=config.intercept)
    s1, s2 = coords[:, 0] / n1, coords[:, 1] / n2
    amp = config.trend.amplitude
    t_y = amp * cubic_trend(config.trend.y, s1, s2)
    t_x = amp * cubic_trend(config.trend.x, s1, s2)
    t_u = amp * cubic_trend(config.trend.u, s1, s2)
    observed = from_arrays(y_lat + t_y, Xc + t_x[:, None], u_lat + t_u, coords=coords,
                           shape=config.shape, x_names=x_names, u_names=["u"],
                           intercept=config.intercept)
    truth = GroundTruth(config, regime_offset=0.5, intercept_offset=y_mean, latent=latent,
                        trends={"y": t_y, "x": t_x, "u": t_u})
    return observed, truth


# --- Monte Carlo harness -------------------------------------------------------


@dataclass
class McConfig:
    """What to do with each replication. ``h`` is a fixed bandwidth, or
    None to select it with ``cv``. ``probes`` are regime points (dataset
    units) where band coverage is checked; ``grid`` defaults to the data's
    default grid per replication."""

    fit: FitConfig = field(default_factory=FitConfig)
    h: float = None
    cv: object = None
    grid: np.ndarray = None
    probes: np.ndarray = None
    level: float = 0.95
    mode: object = None
    detrend_g: float = None
    detrend: bool = False

    def to_dict(self):
        return {
            "fit": self.fit.to_dict(),
            "h": self.h,
            "cv": None if self.cv is None else self.cv.to_dict(),
            "grid": None if self.grid is None else np.asarray(self.grid).tolist(),
            "probes": None if self.probes is None else np.asarray(self.probes).tolist(),
            "level": self.level,
            "mode": str(self.mode or "independent"),
            "detrend": self.detrend,
            "detrend_g": self.detrend_g,
        }


@dataclass
class McReport:
    reps: int
    rmse: np.ndarray  # (reps, d), NaN for failed replications
    covered: np.ndarray  # (reps, probes, d), NaN when not computed
    curve_errors: np.ndarray  # (reps, grid, d) estimate minus truth
    bandwidths: np.ndarray
    failures: int
    errors: list
    seconds: float
    x_names: tuple
    config: dict = field(default_factory=dict)

    @property
    def mean_rmse(self):
        return np.nanmean(self.rmse, axis=0)

    @property
    def median_rmse(self):
        return np.nanmedian(self.rmse, axis=0)

    @property
    def coverage(self):
        """(probes, d) fraction of successful replications covering the truth."""
        if self.covered.size == 0:
            return np.zeros((0, len(self.x_names)))
        return np.nanmean(self.covered, axis=0)

    def to_dict(self):
        def clean(a):
            return [clean(v) for v in a] if isinstance(a, list) else (
                None if isinstance(a, float) and not np.isfinite(a) else a)

        return {
            "reps": self.reps,
            "failures": self.failures,
            "errors": self.errors,
            "seconds": self.seconds,
            "x_names": list(self.x_names),
            "rmse": clean(self.rmse.tolist()),
            "mean_rmse": clean(self.mean_rmse.tolist()),
            "median_rmse": clean(self.median_rmse.tolist()),
            "coverage": clean(self.coverage.tolist()),
            "bandwidths": clean(self.bandwidths.tolist()),
            "config": self.config,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def run_replication(dgp, mc, rep):
    """One replication: ``(errors[grid, d], covered[probes, d], h)``."""
    from .bandwidth import select_bandwidth
    from .detrend import detrend

    ds, truth = generate(dgp, rep)
    if mc.detrend:
        ds, _ = detrend(ds, mc.detrend_g)
    if mc.h is not None:
        h = float(mc.h)
    elif mc.cv is not None:
        h = select_bandwidth(ds, mc.cv, threads=1).selected
    else:
        h = mc.fit.h
    cfg = mc.fit.with_h(h)
    grid = default_grid(ds) if mc.grid is None else np.asarray(mc.grid, dtype=float).reshape(-1, 1)
    if mc.probes is None:
        curve = fit_curve(ds, grid, cfg, threads=1)
        return curve.beta - truth.beta(grid[:, 0]), np.zeros((0, ds.d)), h
    from .inference import bands

    # one curve over grid and probes, so band residuals span the whole grid
    probes = np.asarray(mc.probes, dtype=float).reshape(-1)
    pts = np.unique(np.concatenate([grid[:, 0], probes]))
    curve = fit_curve(ds, pts[:, None], cfg, threads=1)
    gi, pi = np.searchsorted(pts, grid[:, 0]), np.searchsorted(pts, probes)
    err = curve.beta[gi] - truth.beta(grid[:, 0])
    b = bands(curve, ds, cfg, mc.mode, mc.level)
    tb = truth.beta(probes)
    covered = ((b.lower[pi] <= tb) & (tb <= b.upper[pi])).astype(float)
    covered[~np.isfinite(b.se[pi])] = np.nan
    return err, covered, h


def run_mc(dgp, reps, mc=None, threads=None):
    """Run ``reps`` replications and aggregate. A replication that raises a
    numerical error is counted and skipped."""
    if reps < 1:
        raise InvalidConfig("reps must be at least 1")
    mc = mc or McConfig()
    t0 = time.perf_counter()
    d = len(dgp.beta)
    n_probes = 0 if mc.probes is None else np.asarray(mc.probes).reshape(-1).size
    n_grid = None if mc.grid is None else np.asarray(mc.grid).reshape(-1).size

    def one(rep):
        try:
            return run_replication(dgp, mc, rep), None
        except NumericalError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    out = pmap(one, range(reps), threads)
    if n_grid is None:
        n_grid = next((res[0].shape[0] for res, _ in out if res is not None), 0)
    rmse = np.full((reps, d), np.nan)
    curve_errors = np.full((reps, n_grid, d), np.nan)
    covered = np.full((reps, n_probes, d), np.nan)
    hs = np.full(reps, np.nan)
    errors = []
    for r, (res, err) in enumerate(out):
        if res is None:
            errors.append({"rep": r, "error": err})
            continue
        curve_errors[r], c, hs[r] = res
        rmse[r] = np.sqrt(np.nanmean(curve_errors[r] ** 2, axis=0))
        if n_probes:
            covered[r] = c
    names = (("(intercept)",) if dgp.intercept else ()) + tuple(f"x{j + 1}" for j in range(dgp.n_covariates))
    return McReport(reps, rmse, covered, curve_errors, hs, len(errors), errors, time.perf_counter() - t0,
                    names, {"dgp": dgp.to_dict(), "mc": mc.to_dict()})


def with_seed(dgp, seed):
    return replace(dgp, seed=int(seed))

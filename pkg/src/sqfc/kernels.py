"""Product kernels with compact support, their moment constants and
boundary matrices, plus the higher-order kernels used for trend removal.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DimensionMismatch, InvalidConfig, SingularDelta, UnsupportedOrder

# K(u) = scale * (1 - u^2)^power on [-1, 1]
FAMILIES = {
    "uniform": (0.5, 0),
    "epanechnikov": (0.75, 1),
    "biweight": (15.0 / 16.0, 2),
    "triweight": (35.0 / 32.0, 3),
}
FAMILY_IDS = {name: i for i, name in enumerate(FAMILIES)}


def univariate(family, u):
    """Evaluate a univariate kernel; zero outside [-1, 1]."""
    scale, power = FAMILIES[family]
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= 1.0
    return np.where(inside, scale * (1.0 - u * u) ** power, 0.0)


@dataclass(frozen=True)
class KernelSpec:
    """Product kernel K(v) = prod_l K1(v_l) on [-1, 1]^dim."""

    family: str = "epanechnikov"
    dim: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidConfig(f"unknown kernel family {self.family!r}")
        if self.dim < 1:
            raise InvalidConfig("kernel dimension must be >= 1")

    @property
    def support(self):
        return np.ones(self.dim)

    @property
    def family_id(self):
        return FAMILY_IDS[self.family]

    def __call__(self, v):
        return evaluate(self, v)


@dataclass(frozen=True)
class KernelMoments:
    mu0: float
    nu0: float
    m2: np.ndarray
    m2sq: np.ndarray


@dataclass(frozen=True)
class BoundaryMatrices:
    delta_c: np.ndarray
    delta_bar_c: np.ndarray
    delta_row: np.ndarray
    lambda11: float


def evaluate(spec, v):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != spec.dim:
        raise DimensionMismatch(f"expected a vector of length {spec.dim}, got {v.size}")
    return float(np.prod(univariate(spec.family, v)))


def weights(spec, V):
    """Kernel values for each row of the (n, dim) array ``V``."""
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[1] != spec.dim:
        raise DimensionMismatch(f"expected {spec.dim} columns, got {V.shape[1]}")
    return np.prod(univariate(spec.family, V), axis=1)


def _gl_rule(n, lo, hi):
    x, w = leggauss(n)
    half = 0.5 * (hi - lo)
    return half * x + 0.5 * (hi + lo), half * w


def _integrate_box(f, lo, hi, tol=1e-13, start=8, max_nodes=512):
    """Tensor Gauss-Legendre over a box, doubling the node count until two
    successive estimates agree to ``tol``. ``f`` maps an (m, k) array of
    points to an (m, ...) array of values."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    prev = None
    n = start
    while True:
        rules = [_gl_rule(n, a, b) for a, b in zip(lo, hi)]
        pts = np.stack(np.meshgrid(*[r[0] for r in rules], indexing="ij"), -1).reshape(-1, lo.size)
        wts = np.ones(1)
        for r in rules:
            wts = np.multiply.outer(wts, r[1]).reshape(-1)
        vals = np.asarray(f(pts))
        est = np.tensordot(wts, vals, axes=(0, 0))
        if prev is not None and np.max(np.abs(est - prev)) <= tol * max(1.0, np.max(np.abs(est))):
            return est
        if n >= max_nodes:
            return est
        prev = est
        n *= 2


def _moment_integrand(spec, power):
    def f(pts):
        K = weights(spec, pts) ** power
        ext = np.hstack([np.ones((pts.shape[0], 1)), pts])
        return K[:, None, None] * ext[:, :, None] * ext[:, None, :]

    return f


@lru_cache(maxsize=None)
def _moments_cached(family, dim):
    spec = KernelSpec(family, dim)
    lo, hi = -spec.support, spec.support
    A = _integrate_box(_moment_integrand(spec, 1), lo, hi)
    B = _integrate_box(_moment_integrand(spec, 2), lo, hi)
    return KernelMoments(mu0=float(A[0, 0]), nu0=float(B[0, 0]), m2=A[1:, 1:], m2sq=B[1:, 1:])


def moments(spec):
    """mu0 = int K, nu0 = int K^2, and the second-moment matrices of K and K^2."""
    m = _moments_cached(spec.family, spec.dim)
    return KernelMoments(m.mu0, m.nu0, m.m2.copy(), m.m2sq.copy())


def boundary_matrices(spec, c):
    """Moment matrices of K and K^2 over the truncated support
    prod_l [-c_l, M_l] together with the boundary variance constant."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.size != spec.dim:
        raise DimensionMismatch(f"expected c of length {spec.dim}, got {c.size}")
    M = spec.support
    if np.any(c < 0) or np.any(c > M):
        raise InvalidConfig("boundary offsets must satisfy 0 <= c_l <= M_l")
    key = (spec.family, spec.dim, tuple(np.round(c, 15)))
    return _boundary_cached(*key)


@lru_cache(maxsize=4096)
def _boundary_cached(family, dim, c):
    spec = KernelSpec(family, dim)
    c = np.asarray(c)
    lo, hi = -c, spec.support
    delta = _integrate_box(_moment_integrand(spec, 1), lo, hi)
    delta_bar = _integrate_box(_moment_integrand(spec, 2), lo, hi)
    delta = 0.5 * (delta + delta.T)
    delta_bar = 0.5 * (delta_bar + delta_bar.T)
    if np.linalg.cond(delta) >= 1e12:
        raise SingularDelta(f"boundary matrix is numerically singular at c={c}")
    inv = np.linalg.inv(delta)
    lam = inv @ delta_bar @ inv
    return BoundaryMatrices(delta, delta_bar, inv[0].copy(), float(lam[0, 0]))


def boundary_variance_factor(spec, c):
    """lambda11 at offsets c, reducing to nu0 / mu0^2 when every c_l = M_l."""
    return boundary_matrices(spec, np.minimum(c, spec.support)).lambda11


# --- trend kernels -------------------------------------------------------


@dataclass(frozen=True)
class TrendKernelSpec:
    """Kernel W on R^2 for spatial trend smoothing.

    ``order`` 2 is the plain product kernel; order 4 multiplies each axis by
    (a - b s^2) so that the second moment vanishes.
    """

    family: str = "epanechnikov"
    order: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidConfig(f"unknown kernel family {self.family!r}")
        if self.order not in (2, 4):
            raise UnsupportedOrder(f"trend kernel order must be 2 or 4, got {self.order}")

    def axis(self, s):
        return trend_axis(self, s)

    def __call__(self, s):
        return trend_kernel_eval(self, s)


@lru_cache(maxsize=None)
def _order4_coefficients(family):
    spec = KernelSpec(family, 1)

    def f(pts):
        u = pts[:, 0]
        K = univariate(family, u)
        return np.stack([K, u**2 * K, u**4 * K], axis=1)

    m0, m2, m4 = _integrate_box(f, -spec.support, spec.support)
    # a*m0 - b*m2 = 1 ; a*m2 - b*m4 = 0
    a, b = np.linalg.solve(np.array([[m0, -m2], [m2, -m4]]), np.array([1.0, 0.0]))
    return float(a), float(b)


def trend_axis(spec, s):
    s = np.asarray(s, dtype=float)
    base = univariate(spec.family, s)
    if spec.order == 2:
        return base
    a, b = _order4_coefficients(spec.family)
    return (a - b * s * s) * base


def trend_kernel_eval(spec, s):
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.size != 2:
        raise DimensionMismatch(f"trend kernels live on R^2, got length {s.size}")
    return float(np.prod(trend_axis(spec, s)))

"""Kernel estimation and removal of deterministic spatial trends.

Each variable V observed on the lattice is modelled as V(s) = alpha_V(s) + a
stationary part, with s_i = (i1/n1, i2/n2) the rescaled site. The trend is
the Nadaraya-Watson smooth

    alpha_V(s) = sum_i V_i W((s_i - s)/g) / sum_j W((s_j - s)/g)

over the sites where V is observed. W is a product kernel, so on the lattice
both sums are separable matrix products.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyWindow, InvalidConfig, NotPlanar, ShapeMismatch
from .kernels import TrendKernelSpec, trend_axis

# denominators this close to zero mean the window holds no data
_EMPTY = 1e-300


def default_g(n_eff):
    """g = n^(-1/6)."""
    return float(n_eff) ** (-1.0 / 6.0)


def _axis_matrix(spec, n, g, at=None):
    """A[a, b] = W_axis((s_b - t_a)/g) for lattice positions s_b = b/n."""
    s = np.arange(1, n + 1) / n
    t = s if at is None else np.asarray(at, dtype=float)
    return trend_axis(spec, (s[None, :] - t[:, None]) / g)


def _grid_of(ds, values):
    """Scatter a per-row column onto the lattice; NaN where absent."""
    grid = np.full(ds.shape, np.nan)
    grid[tuple((ds.coords - 1).T)] = values
    return grid


@dataclass
class TrendModel:
    """Fitted trend surfaces, one lattice-shaped array per variable.

    ``surfaces[name][i1-1, i2-1]`` is the trend of ``name`` at site (i1, i2);
    NaN marks lattice positions whose window contains no observation.
    """

    g: float
    kernel: TrendKernelSpec
    shape: tuple
    surfaces: dict
    _data: dict = field(default_factory=dict, repr=False)

    @property
    def variables(self):
        return tuple(self.surfaces)

    def at_sites(self, name, coords):
        c = np.asarray(coords, dtype=np.int64).reshape(-1, 2) - 1
        return self.surfaces[name][tuple(c.T)]

    def weights_at(self, name, s):
        """Normalised weights w(s_i, s) over the observed sites of ``name``,
        returned on the lattice (zero where unobserved)."""
        vals = self._data[name]
        mask = np.isfinite(vals)
        s = np.asarray(s, dtype=float).reshape(2)
        a1 = _axis_matrix(self.kernel, self.shape[0], self.g, [s[0]])[0]
        a2 = _axis_matrix(self.kernel, self.shape[1], self.g, [s[1]])[0]
        raw = np.outer(a1, a2) * mask
        total = raw.sum()
        if not abs(total) > _EMPTY or not np.any(raw != 0):
            raise EmptyWindow(f"no observed site within the trend window at s={s.tolist()}")
        return raw / total

    def evaluate(self, name, s):
        """Trend of ``name`` at an arbitrary rescaled location ``s``."""
        vals = np.nan_to_num(self._data[name])
        return float(np.sum(self.weights_at(name, s) * vals))

    def to_dict(self):
        return {
            "g": self.g,
            "kernel": self.kernel.family,
            "order": self.kernel.order,
            "shape": list(self.shape),
            "surfaces": {k: [[None if not np.isfinite(v) else float(v) for v in row] for row in s]
                         for k, s in self.surfaces.items()},
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def estimate_trend(ds, g=None, spec=None, variables=None):
    """Trend surfaces for the response, the covariates and the regime
    columns (or the listed ``variables``)."""
    if ds.N != 2:
        raise NotPlanar(f"trend estimation needs a planar lattice, got N={ds.N}")
    spec = spec or TrendKernelSpec()
    if g is None:
        g = default_g(ds.n_effective)
    if not g > 0:
        raise InvalidConfig(f"trend bandwidth must be positive, got {g}")
    if variables is None:
        variables = [ds.response, *ds.covariates, *ds.regimes]
    n1, n2 = ds.shape
    A1 = _axis_matrix(spec, n1, g)
    A2 = _axis_matrix(spec, n2, g)
    occupied = np.zeros(ds.shape, dtype=bool)
    occupied[tuple((ds.coords - 1).T)] = True
    surfaces, data = {}, {}
    for name in dict.fromkeys(variables):
        grid = _grid_of(ds, ds.columns[name])
        mask = np.isfinite(grid)
        num = A1 @ np.where(mask, grid, 0.0) @ A2.T
        den = A1 @ mask.astype(float) @ A2.T
        support = (np.abs(A1) > 0).astype(float) @ mask.astype(float) @ (np.abs(A2) > 0).astype(float).T
        empty = (support == 0) | (np.abs(den) <= _EMPTY)
        if np.any(empty & occupied):
            raise EmptyWindow(f"a site has no observed {name!r} within the trend window (g={g})")
        surf = np.where(empty, np.nan, num / np.where(empty, 1.0, den))
        surf.setflags(write=False)
        surfaces[name] = surf
        data[name] = grid
    return TrendModel(float(g), spec, tuple(ds.shape), surfaces, data)


def _is_constant_one(values):
    v = values[np.isfinite(values)]
    return v.size > 0 and np.all(v == 1.0)


def detrend_dataset(ds, model):
    """Subtract the fitted trends site by site. Columns identically equal to
    one are left untouched."""
    if tuple(ds.shape) != tuple(model.shape):
        raise ShapeMismatch(f"trend fitted on shape {model.shape}, dataset has {ds.shape}")
    cols = {}
    for name in model.variables:
        if name not in ds.columns or _is_constant_one(ds.columns[name]):
            continue
        cols[name] = ds.columns[name] - model.at_sites(name, ds.coords)
    return ds.with_columns(**cols)


def detrend(ds, g=None, spec=None, variables=None):
    """estimate_trend followed by detrend_dataset."""
    model = estimate_trend(ds, g, spec, variables)
    return detrend_dataset(ds, model), model

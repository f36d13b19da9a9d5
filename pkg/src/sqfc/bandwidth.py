"""Cross-validated bandwidth selection.

The criterion is the fitting loss itself: each evaluation site is predicted
from a local fit at its own regime value with a spatial block around it
held out, and the loss of the prediction errors is averaged.
"""

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from ._parallel import pmap
from .errors import AllCandidatesFailed, InvalidConfig, NoEvaluableSites, NumericalError
from .kernels import KernelSpec
from .localfit import FitConfig, fit_arrays
from .loss import LossSpec, Quantile, loss_value

MAX_FAIL_FRACTION = 0.1


def parse_range(text):
    """``"a:b:step"`` -> candidates a, a+step, ..., b (inclusive)."""
    try:
        a, b, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise InvalidConfig(f"bandwidth range must look like a:b:step, got {text!r}") from None
    if not (step > 0 and b >= a):
        raise InvalidConfig(f"bad bandwidth range {text!r}")
    n = int(round((b - a) / step)) + 1
    return tuple(round(a + i * step, 12) for i in range(n))


@dataclass(frozen=True)
class CvConfig:
    h_grid: tuple
    leave_out: int = 1
    loss: LossSpec = field(default_factory=lambda: Quantile(0.5))
    kernel: KernelSpec = field(default_factory=KernelSpec)
    sites: tuple = None
    base: FitConfig = None

    def __post_init__(self):
        g = tuple(float(h) for h in np.atleast_1d(self.h_grid))
        object.__setattr__(self, "h_grid", g)
        if not g:
            raise InvalidConfig("bandwidth grid is empty")
        if any(not h > 0 for h in g) or any(b <= a for a, b in zip(g, g[1:])):
            raise InvalidConfig("bandwidth grid must be positive and strictly increasing")
        if int(self.leave_out) != self.leave_out or self.leave_out < 1:
            raise InvalidConfig(f"leave_out must be a positive integer, got {self.leave_out}")
        if self.sites is not None:
            object.__setattr__(self, "sites", tuple(int(s) for s in self.sites))

    def fit_config(self, h):
        if self.base is not None:
            return FitConfig(self.loss, self.kernel, float(h), self.base.tol, self.base.max_iter,
                             self.base.eps_smooth, self.base.eps_min, self.base.min_support,
                             self.base.cond_max)
        return FitConfig(loss=self.loss, kernel=self.kernel, h=float(h))

    def to_dict(self):
        out = self.loss.to_dict()
        out.update(h_grid=list(self.h_grid), leave_out=self.leave_out, kernel=self.kernel.family,
                   sites=None if self.sites is None else list(self.sites))
        return out


@dataclass
class CvReport:
    h_grid: tuple
    scores: list
    failures: list
    evaluated: int
    selected: float
    config: dict = field(default_factory=dict)

    @property
    def table(self):
        return list(zip(self.h_grid, self.scores, self.failures))

    def to_dict(self):
        return {
            "selected": self.selected,
            "evaluated_sites": self.evaluated,
            "candidates": [
                {"h": h, "score": s if np.isfinite(s) else None, "failures": f}
                for h, s, f in self.table
            ],
            "config": self.config,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def _block_offsets(N, radius):
    rng = range(-radius, radius + 1)
    offs = [o for o in itertools.product(rng, repeat=N) if any(o)]
    return sorted(offs, key=lambda o: (sum(t * t for t in o), o))


def leave_out_blocks(ds, size, rows=None):
    """For each usable row (or each of ``rows``), the usable row indices of
    its held-out block: the site itself plus the ``size - 1`` nearest
    in-bounds lattice positions, ties by lexicographic position."""
    usable_rows = np.flatnonzero(ds.usable)
    pos = np.full(ds.coords.shape[0], -1, dtype=np.int64)
    pos[usable_rows] = np.arange(usable_rows.size)
    lookup = ds.site_lookup()
    grid = np.where(lookup >= 0, pos[np.maximum(lookup, 0)], -1)
    sites = ds.sites - 1
    rows = range(usable_rows.size) if rows is None else rows
    shape = np.array(ds.shape)
    radius = 1
    while (2 * radius + 1) ** ds.N < size + 1 and radius < max(ds.shape):
        radius += 1
    offsets = np.array(_block_offsets(ds.N, radius), dtype=np.int64).reshape(-1, ds.N)
    blocks = []
    for i in rows:
        if size == 1:
            blocks.append(np.array([i]))
            continue
        nb = sites[i] + offsets
        inb = np.all((nb >= 0) & (nb < shape), axis=1)
        r = radius
        while inb.sum() < size - 1 and r < max(ds.shape):
            r += 1
            offsets = np.array(_block_offsets(ds.N, r), dtype=np.int64).reshape(-1, ds.N)
            nb = sites[i] + offsets
            inb = np.all((nb >= 0) & (nb < shape), axis=1)
        chosen = nb[inb][: size - 1]
        members = grid[tuple(chosen.T)]
        blocks.append(np.concatenate([[i], members[members >= 0]]))
    return blocks


def _eval_rows(ds, cfg):
    n = ds.n_effective
    if cfg.sites is None:
        return np.arange(n)
    rows = np.asarray(cfg.sites, dtype=np.int64)
    if rows.size == 0 or rows.min() < 0 or rows.max() >= n:
        raise InvalidConfig("evaluation sites must index usable rows")
    return rows


def held_out_predictions(ds, h, cfg, threads=None, blocks=None):
    """Held-out predictions at the evaluation rows (NaN where the fit failed)."""
    rows = _eval_rows(ds, cfg)
    if blocks is None:
        blocks = leave_out_blocks(ds, cfg.leave_out, rows)
    fcfg = cfg.fit_config(h)
    X, y, U = ds.X, ds.y, ds.U

    def one(j):
        i = rows[j]
        try:
            res = fit_arrays(X, y, U, U[i], fcfg, exclude=blocks[j])
        except NumericalError:
            return np.nan
        return float(X[i] @ res.beta_hat)

    return np.array(pmap(one, range(rows.size), threads))


def cv_score(ds, h, cfg, threads=None, blocks=None):
    """Mean held-out loss over evaluable sites and the number of failures."""
    if not h > 0:
        raise InvalidConfig(f"bandwidth must be positive, got {h}")
    rows = _eval_rows(ds, cfg)
    pred = held_out_predictions(ds, h, cfg, threads, blocks)
    ok = np.isfinite(pred)
    if not ok.any():
        raise NoEvaluableSites(f"every held-out fit failed at h={h}")
    resid = ds.y[rows][ok] - pred[ok]
    return float(np.mean(loss_value(cfg.loss, resid))), int((~ok).sum())


def select_bandwidth(ds, cfg, threads=None):
    """Score every candidate and pick the best admissible one, preferring
    the larger h on ties."""
    rows = _eval_rows(ds, cfg)
    blocks = leave_out_blocks(ds, cfg.leave_out, rows)
    scores, fails = [], []
    for h in cfg.h_grid:
        try:
            s, f = cv_score(ds, h, cfg, threads, blocks)
        except NoEvaluableSites:
            s, f = np.nan, rows.size
        scores.append(s)
        fails.append(f)
    best = None
    for h, s, f in zip(cfg.h_grid, scores, fails):
        if not np.isfinite(s) or f > MAX_FAIL_FRACTION * rows.size:
            continue
        if best is None or s <= best[1]:
            best = (h, s)
    if best is None:
        raise AllCandidatesFailed("no bandwidth candidate had enough evaluable sites")
    return CvReport(cfg.h_grid, scores, fails, int(rows.size), best[0], cfg.to_dict())

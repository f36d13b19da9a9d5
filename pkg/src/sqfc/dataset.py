"""Lattice-indexed observations (Y, X, U), CSV ingestion and
nearest-neighbour covariate augmentation."""

import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import (
    DataError,
    DuplicateSite,
    EmptyDataset,
    InvalidConfig,
    MissingColumn,
    NotPlanar,
    ShapeMismatch,
)

INTERCEPT = "(intercept)"
MISSING_TOKENS = {"", "NA", "NaN", "nan"}

# lattice offsets; axis 1 runs west-east, axis 2 runs south-north
DIRECTIONS = {
    "west": ((-1, 0), "w"),
    "east": ((1, 0), "e"),
    "north": ((0, 1), "n"),
    "south": ((0, -1), "s"),
}


class Observation(NamedTuple):
    site: tuple
    y: float
    x: np.ndarray
    u: np.ndarray


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpatialDataset:
    """Immutable table of observations on a rectangular lattice.

    Rows are sites; ``columns`` maps every numeric column to its values with
    NaN marking a missing entry. A row is usable for fitting when the
    response, every covariate and every regime column are finite there.
    """

    shape: tuple
    coords: np.ndarray
    columns: dict
    response: str
    covariates: tuple
    regimes: tuple
    intercept: bool = True
    dropped: int = 0
    coord_names: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "coords", _frozen(self.coords, dtype=np.int64).reshape(-1, len(self.shape)))
        object.__setattr__(self, "columns", {k: _frozen(v) for k, v in self.columns.items()})
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "regimes", tuple(self.regimes))
        if not self.coord_names:
            object.__setattr__(self, "coord_names", tuple(f"i{l + 1}" for l in range(len(self.shape))))
        for name in (self.response, *self.covariates, *self.regimes):
            if name not in self.columns:
                raise MissingColumn(f"column {name!r} not in dataset")
        if not self.regimes:
            raise InvalidConfig("at least one regime column is required")
        if not self.covariates and not self.intercept:
            raise InvalidConfig("at least one covariate (or the intercept) is required")
        n = self.coords.shape[0]
        for k, v in self.columns.items():
            if v.shape != (n,):
                raise DataError(f"column {k!r} has {v.shape[0]} values for {n} sites")
        if n and (np.any(self.coords < 1) or np.any(self.coords > np.array(self.shape))):
            raise ShapeMismatch("site coordinates fall outside the grid shape")
        flat = np.ravel_multi_index(tuple((self.coords - 1).T), self.shape) if n else np.zeros(0, int)
        if np.unique(flat).size != flat.size:
            raise DuplicateSite("two rows share the same site coordinates")

    # -- roles -----------------------------------------------------------
    @property
    def N(self):
        return len(self.shape)

    @property
    def used_columns(self):
        return (self.response, *self.covariates, *self.regimes)

    @property
    def x_names(self):
        return ((INTERCEPT,) if self.intercept else ()) + self.covariates

    @property
    def d(self):
        return len(self.x_names)

    @property
    def k(self):
        return len(self.regimes)

    @property
    def usable(self):
        """Boolean mask over rows: True where every used column is finite."""
        if "usable" not in self._cache:
            m = np.ones(self.coords.shape[0], dtype=bool)
            for name in self.used_columns:
                m &= np.isfinite(self.columns[name])
            m.setflags(write=False)
            self._cache["usable"] = m
        return self._cache["usable"]

    @property
    def missing_mask(self):
        """Grid-shaped mask, True where a site has no usable observation."""
        grid = np.ones(self.shape, dtype=bool)
        c = self.coords[self.usable] - 1
        grid[tuple(c.T)] = False
        return grid

    @property
    def n_effective(self):
        return int(self.usable.sum())

    # -- arrays over usable rows ----------------------------------------
    def _stack(self, names):
        m = self.usable
        if not names:
            return np.zeros((int(m.sum()), 0))
        return np.column_stack([self.columns[c][m] for c in names])

    @property
    def y(self):
        if "y" not in self._cache:
            self._cache["y"] = _frozen(self.columns[self.response][self.usable])
        return self._cache["y"]

    @property
    def X(self):
        if "X" not in self._cache:
            X = self._stack(self.covariates)
            if self.intercept:
                X = np.hstack([np.ones((X.shape[0], 1)), X])
            self._cache["X"] = _frozen(X)
        return self._cache["X"]

    @property
    def U(self):
        if "U" not in self._cache:
            self._cache["U"] = _frozen(self._stack(self.regimes))
        return self._cache["U"]

    @property
    def sites(self):
        return self.coords[self.usable]

    def observations(self):
        return [
            Observation(tuple(int(c) for c in s), float(y), x.copy(), u.copy())
            for s, y, x, u in zip(self.sites, self.y, self.X, self.U)
        ]

    def site_lookup(self):
        """Grid of row indices (all rows, usable or not); -1 where absent."""
        grid = np.full(self.shape, -1, dtype=np.int64)
        if self.coords.shape[0]:
            grid[tuple((self.coords - 1).T)] = np.arange(self.coords.shape[0])
        return grid

    # -- derived datasets -----------------------------------------------
    def with_columns(self, **values):
        cols = dict(self.columns)
        cols.update(values)
        return replace(self, columns=cols, _cache={})

    def with_roles(self, response=None, covariates=None, regimes=None, intercept=None):
        return replace(
            self,
            response=self.response if response is None else response,
            covariates=self.covariates if covariates is None else tuple(covariates),
            regimes=self.regimes if regimes is None else tuple(regimes),
            intercept=self.intercept if intercept is None else intercept,
            _cache={},
        )

    def subset(self, rows):
        """Dataset restricted to the given row indices (of all rows)."""
        rows = np.asarray(rows)
        return replace(
            self,
            coords=self.coords[rows],
            columns={k: v[rows] for k, v in self.columns.items()},
            _cache={},
        )

    def to_csv(self, path):
        write_csv(self, path)


def from_arrays(y, X, U, coords=None, shape=None, x_names=None, u_names=None,
                y_name="y", intercept=True, extra=None):
    """Build a dataset from arrays. ``X`` excludes the intercept column."""
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.size
    X = np.asarray(X, dtype=float).reshape(n, -1)
    U = np.asarray(U, dtype=float).reshape(n, -1)
    if coords is None:
        coords = np.column_stack([np.arange(1, n + 1)])
        shape = (n,)
    coords = np.asarray(coords, dtype=np.int64).reshape(n, -1)
    if shape is None:
        shape = tuple(int(m) for m in coords.max(axis=0))
    x_names = tuple(x_names or (f"x{j + 1}" for j in range(X.shape[1])))
    u_names = tuple(u_names or (f"u{j + 1}" for j in range(U.shape[1])))
    cols = {y_name: y}
    cols.update({nm: X[:, j] for j, nm in enumerate(x_names)})
    cols.update({nm: U[:, j] for j, nm in enumerate(u_names)})
    if extra:
        cols.update({k: np.asarray(v, dtype=float) for k, v in extra.items()})
    return SpatialDataset(shape, coords, cols, y_name, x_names, u_names, intercept)


def _parse(token):
    token = token.strip()
    if token in MISSING_TOKENS:
        return math.nan
    return float(token)


def load_csv(path, schema, shape=None, intercept=True):
    """Read a lattice CSV.

    ``schema`` maps ``coords`` (list of N site-coordinate columns),
    ``response``, ``covariates`` and ``regimes`` to column names. Rows with a
    non-finite value in any used column are dropped and counted in
    ``dataset.dropped``.
    """
    coord_cols = list(schema["coords"])
    response = schema["response"]
    covariates = list(schema.get("covariates", ()))
    regimes = list(schema["regimes"])
    used = [response, *covariates, *regimes]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        for name in coord_cols + used:
            if name not in header:
                raise MissingColumn(f"column {name!r} not found in {path}")
        rows = [r for r in reader if r and any(t.strip() for t in r)]

    pos = {h: j for j, h in enumerate(header)}
    data_cols = [h for h in header if h not in coord_cols]
    coords, values, dropped = [], {h: [] for h in data_cols}, 0
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            site = [int(row[pos[c]]) for c in coord_cols]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer site coordinate") from None
        parsed = {}
        for h in data_cols:
            try:
                parsed[h] = _parse(row[pos[h]])
            except ValueError:
                if h in used:
                    raise DataError(f"{path}:{lineno}: non-numeric value in column {h!r}") from None
                parsed[h] = math.nan
        coords.append(site)
        for h in data_cols:
            values[h].append(parsed[h])

    coords = np.array(coords, dtype=np.int64).reshape(-1, len(coord_cols))
    if coords.shape[0]:
        flat = [tuple(c) for c in coords]
        if len(set(flat)) != len(flat):
            raise DuplicateSite(f"{path}: two rows share the same site coordinates")
    cols = {h: np.array(v, dtype=float) for h, v in values.items()}
    keep = np.ones(coords.shape[0], dtype=bool)
    for name in used:
        keep &= np.isfinite(cols[name])
    dropped = int((~keep).sum())
    if not keep.any():
        raise EmptyDataset(f"{path}: no usable rows")
    coords = coords[keep]
    cols = {h: v[keep] for h, v in cols.items()}
    if shape is None:
        shape = tuple(int(m) for m in coords.max(axis=0))
    return SpatialDataset(tuple(shape), coords, cols, response, covariates, regimes,
                          intercept, dropped, tuple(coord_cols))


def _fmt(v):
    return "NA" if not np.isfinite(v) else repr(float(v))


def write_csv(ds, path, columns=None):
    """Write every column with round-trip precision; NaN becomes ``NA``."""
    columns = list(columns or ds.columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*ds.coord_names, *columns])
        for r in range(ds.coords.shape[0]):
            w.writerow([*map(int, ds.coords[r]), *(_fmt(ds.columns[c][r]) for c in columns)])


def schema_of(ds):
    return {
        "coords": list(ds.coord_names),
        "response": ds.response,
        "covariates": list(ds.covariates),
        "regimes": list(ds.regimes),
    }


def augment_neighbors(ds, source, directions, suffixes=None):
    """Add one covariate per direction holding ``source`` at the adjacent site.

    Sites whose neighbour lies outside the grid, is absent, or has a missing
    source value get NaN and therefore drop out of the usable set.
    """
    directions = list(directions)
    if not directions:
        return ds
    if ds.N != 2:
        raise NotPlanar(f"neighbour augmentation needs a planar lattice, got N={ds.N}")
    if source not in ds.columns:
        raise MissingColumn(f"column {source!r} not in dataset")
    unknown = [d for d in directions if d not in DIRECTIONS]
    if unknown:
        raise InvalidConfig(f"unknown directions {unknown}")
    lookup = ds.site_lookup()
    src = ds.columns[source]
    new_cols, names = {}, []
    for dname in directions:
        (d1, d2), short = DIRECTIONS[dname]
        name = f"{source}{(suffixes or {}).get(dname, short)}"
        nb = ds.coords - 1 + np.array([d1, d2])
        inside = np.all((nb >= 0) & (nb < np.array(ds.shape)), axis=1)
        vals = np.full(ds.coords.shape[0], np.nan)
        rows = np.full(ds.coords.shape[0], -1)
        rows[inside] = lookup[tuple(nb[inside].T)]
        ok = rows >= 0
        vals[ok] = src[rows[ok]]
        new_cols[name] = vals
        names.append(name)
    out = ds.with_columns(**new_cols)
    return out.with_roles(covariates=[*ds.covariates, *[n for n in names if n not in ds.covariates]])

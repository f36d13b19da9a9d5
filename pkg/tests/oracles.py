"""Independent reference computations shared by the tests.

Nothing here calls into the solver: objectives are recomputed from the
returned coefficients and exact answers come from brute force or closed
forms.
"""

import itertools

import numpy as np

from sqfc.kernels import KernelSpec, weights
from sqfc.loss import loss_value


def kernel_weights(U, u0, h, family="epanechnikov"):
    U = np.asarray(U, dtype=float).reshape(len(U), -1)
    return weights(KernelSpec(family, U.shape[1]), (U - np.asarray(u0, dtype=float)) / h)


def local_predictions(X, U, u0, beta, slope):
    """sum_r (beta_r + slope_r . (U - u0)) X_r."""
    U = np.asarray(U, dtype=float).reshape(len(U), -1)
    D = U - np.asarray(u0, dtype=float)
    coef = beta[None, :] + D @ np.asarray(slope).T
    return np.sum(coef * X, axis=1)


def local_objective(X, y, U, u0, h, loss, beta, slope, family="epanechnikov"):
    w = kernel_weights(U, u0, h, family)
    r = y - local_predictions(X, U, u0, beta, slope)
    return float(np.sum(w * loss_value(loss, r)))


def design(X, U, u0, h):
    U = np.asarray(U, dtype=float).reshape(len(U), -1)
    T = (U - np.asarray(u0, dtype=float)) / h
    return np.hstack([X] + [X * T[:, [l]] for l in range(T.shape[1])])


def exhaustive_quantile(Z, y, w, tau):
    """Minimum of sum w |r| + (2 tau - 1) r over every basic solution, i.e.
    every exact fit through p = Z.shape[1] of the points."""
    n, p = Z.shape
    best = np.inf
    for S in itertools.combinations(range(n), p):
        A = Z[list(S)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        theta = np.linalg.solve(A, y[list(S)])
        r = y - Z @ theta
        best = min(best, float(np.sum(w * (np.abs(r) + (2 * tau - 1) * r))))
    return best


def weighted_median_objective(y, w):
    """min_a sum w |y - a|, searched over the data points and midpoints."""
    ys = np.sort(np.asarray(y, dtype=float))
    cands = np.concatenate([ys, 0.5 * (ys[1:] + ys[:-1])])
    vals = [np.sum(w * np.abs(y - a)) for a in cands]
    j = int(np.argmin(vals))
    return float(vals[j]), float(cands[j])


def wls(Z, y, w):
    """Normal equations solved directly."""
    return np.linalg.solve(Z.T @ (w[:, None] * Z), Z.T @ (w * y))


def mirrored_instance(rng, n_pairs, u0, h):
    """Points (u0 + d, y) and (u0 - d, y) in pairs. The local objective is
    then convex and even in the slope, so its minimum over (a, b) equals
    the minimum over a alone: a weighted median problem."""
    d = rng.uniform(0.0, 0.95 * h, n_pairs)
    y = rng.standard_normal(n_pairs)
    U = np.concatenate([u0 + d, u0 - d])
    return U, np.concatenate([y, y])

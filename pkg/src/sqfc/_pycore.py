"""Pure-Python (numpy) versions of the hot kernels.

Mirrors ``_core.pyx`` operation for operation; used when the compiled
extension is unavailable or ``SQFC_BACKEND=python`` is set.
"""

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .kernels import FAMILIES

_FAMILY_BY_ID = list(FAMILIES)

SQUARED, QUANTILE, HUBER = 0, 1, 2


def local_weights(U, u0, h, family_id):
    scale, power = FAMILIES[_FAMILY_BY_ID[family_id]]
    T = (np.asarray(U, dtype=float) - np.asarray(u0, dtype=float)) / h
    inside = np.all(np.abs(T) <= 1.0, axis=1)
    w = np.zeros(T.shape[0])
    Ti = T[inside]
    w[inside] = np.prod(scale * (1.0 - Ti * Ti) ** power, axis=1)
    return w


def _solve(Z, v, rhs):
    G = (Z * v[:, None]).T @ Z
    try:
        return cho_solve(cho_factor(G, lower=True, check_finite=False), rhs, check_finite=False)
    except LinAlgError:
        G[np.diag_indices_from(G)] += 1e-12 * np.max(np.diag(G))
        try:
            return cho_solve(cho_factor(G, lower=True, check_finite=False), rhs, check_finite=False)
        except LinAlgError:
            return None


def _objective(code, param, r, w, eps):
    if code == QUANTILE:
        return float(np.sum(w * (np.sqrt(r * r + eps * eps) + (2.0 * param - 1.0) * r)))
    if code == HUBER:
        a = np.abs(r)
        return float(np.sum(w * np.where(a <= param, r * r / (2.0 * param), a - 0.5 * param)))
    return float(np.sum(w * r * r))


def irls(Z, y, w, code, param, tol, max_iter, eps0, eps_min, trace=False):
    """Majorize-minimize / IRLS solve of min sum_i w_i rho(y_i - Z_i theta).

    Returns ``(theta, objective, iterations, converged, status, trace)``
    where the smoothing levels ``eps0`` and ``eps_min`` are multiples of the
    weighted mean absolute least-squares residual, ``status`` is 0 on success and 1 if a linear solve broke down;
    ``trace`` is a list of ``(eps, surrogate_objective)`` pairs (empty
    unless requested).
    """
    Z = np.ascontiguousarray(Z, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    theta = _solve(Z, w, Z.T @ (w * y))
    if theta is None:
        return np.zeros(Z.shape[1]), np.nan, 0, False, 1, []
    r = y - Z @ theta
    if code == SQUARED:
        return theta, _objective(code, param, r, w, 0.0), 1, True, 0, []

    # smoothing is relative to the residual scale so the iteration is
    # location and scale equivariant
    sw = np.sum(w)
    sc = float(np.sum(w * np.abs(r)) / sw) if sw > 0 else 0.0
    if not sc > 0:
        sc = 1.0
    eps_min = eps_min * sc
    eps = eps0 * sc if code == QUANTILE else 0.0
    F = _objective(code, param, r, w, eps)
    hist = [(eps, F)] if trace else []
    lin = (2.0 * param - 1.0) * (Z.T @ w) if code == QUANTILE else 0.0
    it, converged, status = 0, False, 0
    while it < max_iter:
        if code == QUANTILE:
            v = w / np.sqrt(r * r + eps * eps)
        else:
            a = np.abs(r)
            v = w / np.where(a <= param, param, a)
        new = _solve(Z, v, Z.T @ (v * y) + lin)
        it += 1
        if new is None:
            status = 1
            break
        theta = new
        r = y - Z @ theta
        F_new = _objective(code, param, r, w, eps)
        if trace:
            hist.append((eps, F_new))
        change = abs(F - F_new)
        F = F_new
        if change <= tol * max(abs(F), 1e-300):
            if code != QUANTILE or eps <= eps_min * 1.0000001:
                converged = True
                break
            eps = max(eps * 0.1, eps_min)
            F = _objective(code, param, r, w, eps)
            if trace:
                hist.append((eps, F))
    return theta, _objective(code, param, r, w, 0.0), it, converged, status, hist


def _check_objective(r, w, tau):
    return float(np.sum(w * np.where(r > 0, 2.0 * tau * r, 2.0 * (tau - 1.0) * r)))


def _greedy_basis(Z, order):
    """First p rows in ``order`` that are linearly independent."""
    p = Z.shape[1]
    Q = np.zeros((p, p))
    B = []
    for i in order:
        v = Z[i].copy()
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            continue
        for q in Q[: len(B)]:
            v -= (q @ v) * q
        if np.linalg.norm(v) > 1e-10 * nrm:
            Q[len(B)] = v / np.linalg.norm(v)
            B.append(i)
            if len(B) == p:
                return np.array(B)
    return None


def vertex_polish(Z, y, w, tau, theta, max_pivots):
    """Exact refinement for the check loss: simplex pivots over basic
    solutions (fits interpolating p observations), starting from the p
    smallest residuals of ``theta``. Only objective decreases are accepted.

    Returns ``(theta, objective, pivots, optimal)``.
    """
    Z = np.ascontiguousarray(Z, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    n, p = Z.shape
    r = y - Z @ theta
    B = _greedy_basis(Z, np.argsort(np.abs(r), kind="stable"))
    if B is None:
        return theta, _check_objective(r, w, tau), 0, False
    cp, cm = 2.0 * tau, 2.0 * (1.0 - tau)
    try:
        th = np.linalg.solve(Z[B], y[B])
    except np.linalg.LinAlgError:
        return theta, _check_objective(r, w, tau), 0, False
    r = y - Z @ th
    r[B] = 0.0
    F = _check_objective(r, w, tau)
    thresh = 1e-11 * (cp + cm) * (np.sum(w) + 1e-300)
    basic = np.zeros(n, dtype=bool)
    pivots, optimal = 0, False
    while pivots < max_pivots:
        basic[:] = False
        basic[B] = True
        ZB = Z[B]
        rtol = 1e-12 * (np.max(np.abs(r)) + 1e-300)
        pos = ~basic & (r > rtol)
        neg = ~basic & (r < -rtol)
        zero = ~basic & ~pos & ~neg
        u = (w * np.where(pos, cp, np.where(neg, -cm, 0.0))) @ Z
        try:
            s = np.linalg.solve(ZB.T, u)
            gp = s + w[B] * cp
            gm = -s + w[B] * cm
            if zero.any():
                Az = np.linalg.solve(ZB.T, Z[zero].T).T
                wz = w[zero][:, None]
                gp += np.sum(wz * np.where(Az > 0, cp * Az, -cm * Az), axis=0)
                gm += np.sum(wz * np.where(Az < 0, -cp * Az, cm * Az), axis=0)
        except np.linalg.LinAlgError:
            break
        g = np.concatenate([gp, gm])
        jj = int(np.argmin(g))
        if g[jj] >= -thresh:
            optimal = True
            break
        sigma = 1.0 if jj < p else -1.0
        j = jj % p
        e = np.zeros(p)
        e[j] = 1.0
        slope = sigma * (Z @ np.linalg.solve(ZB, e))
        cand = np.flatnonzero(~basic & (slope != 0.0))
        t = -r[cand] / slope[cand]
        keep = t > 0
        cand, t = cand[keep], t[keep]
        if cand.size == 0:
            break
        order = np.argsort(t, kind="stable")
        cum = g[jj] + np.cumsum(w[cand[order]] * np.abs(slope[cand[order]]) * (cp + cm))
        stop = int(np.argmax(cum >= 0.0)) if np.any(cum >= 0.0) else cand.size - 1
        newB = B.copy()
        newB[j] = cand[order[stop]]
        try:
            th_new = np.linalg.solve(Z[newB], y[newB])
        except np.linalg.LinAlgError:
            break
        r_new = y - Z @ th_new
        r_new[newB] = 0.0
        F_new = _check_objective(r_new, w, tau)
        pivots += 1
        if F_new > F:
            break
        B, th, r, F = newB, th_new, r_new, F_new
    return th, F, pivots, optimal

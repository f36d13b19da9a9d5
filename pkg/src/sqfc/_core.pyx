# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: local kernel weights and the IRLS solver.

Same algorithm as ``_pycore``; the solver runs without the GIL so that
threads can evaluate different regime points concurrently.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

cdef enum:
    SQUARED = 0
    QUANTILE = 1
    HUBER = 2

# K(u) = scale * (1 - u^2)^power, same table as kernels.FAMILIES
cdef double[4] _SCALE = [0.5, 0.75, 15.0 / 16.0, 35.0 / 32.0]
cdef int[4] _POWER = [0, 1, 2, 3]


def local_weights(const double[:, ::1] U, const double[::1] u0, double h, int family_id):
    cdef Py_ssize_t n = U.shape[0], k = U.shape[1], i, l, j
    cdef double scale = _SCALE[family_id], t, q, prod
    cdef int power = _POWER[family_id]
    out = np.zeros(n)
    cdef double[::1] w = out
    with nogil:
        for i in range(n):
            prod = 1.0
            for l in range(k):
                t = (U[i, l] - u0[l]) / h
                if fabs(t) > 1.0:
                    prod = 0.0
                    break
                q = 1.0
                for j in range(power):
                    q = q * (1.0 - t * t)
                prod = prod * scale * q
            w[i] = prod
    return out


cdef int _cholesky_solve(double* G, double* b, Py_ssize_t p) noexcept nogil:
    """In-place Cholesky of the p x p row-major G (lower part), then solve
    G x = b overwriting b. Returns 0 on success, 1 if G is not PD."""
    cdef Py_ssize_t i, j, m
    cdef double s
    for j in range(p):
        s = G[j * p + j]
        for m in range(j):
            s -= G[j * p + m] * G[j * p + m]
        if s <= 0.0:
            return 1
        s = sqrt(s)
        G[j * p + j] = s
        for i in range(j + 1, p):
            for m in range(j):
                G[i * p + j] -= G[i * p + m] * G[j * p + m]
            G[i * p + j] /= s
    for i in range(p):
        s = b[i]
        for m in range(i):
            s -= G[i * p + m] * b[m]
        b[i] = s / G[i * p + i]
    for i in range(p - 1, -1, -1):
        s = b[i]
        for m in range(i + 1, p):
            s -= G[m * p + i] * b[m]
        b[i] = s / G[i * p + i]
    return 0


cdef int _weighted_solve(const double[:, ::1] Z, const double[::1] v, const double[::1] y, double[::1] lin,
                         double[::1] G, double[::1] Gsave, double[::1] theta) noexcept nogil:
    """theta = (Z' V Z)^{-1} (Z' V y + lin), with one jittered retry."""
    cdef Py_ssize_t n = Z.shape[0], p = Z.shape[1], i, a, b
    cdef double vi, zia, mx
    for a in range(p * p):
        G[a] = 0.0
    for a in range(p):
        theta[a] = lin[a]
    for i in range(n):
        vi = v[i]
        if vi == 0.0:
            continue
        for a in range(p):
            zia = vi * Z[i, a]
            theta[a] += zia * y[i]
            for b in range(a + 1):
                G[a * p + b] += zia * Z[i, b]
    for a in range(p * p):
        Gsave[a] = G[a]
    for a in range(p):
        Gsave[p * p + a] = theta[a]
    if _cholesky_solve(&G[0], &theta[0], p) == 0:
        return 0
    mx = 0.0
    for a in range(p):
        if Gsave[a * p + a] > mx:
            mx = Gsave[a * p + a]
    for a in range(p * p):
        G[a] = Gsave[a]
    for a in range(p):
        G[a * p + a] += 1e-12 * mx
        theta[a] = Gsave[p * p + a]
    return _cholesky_solve(&G[0], &theta[0], p)


cdef double _objective(int code, double param, const double[::1] r, const double[::1] w, double eps) noexcept nogil:
    cdef Py_ssize_t i, n = r.shape[0]
    cdef double s = 0.0, a
    for i in range(n):
        if w[i] == 0.0:
            continue
        if code == QUANTILE:
            s += w[i] * (sqrt(r[i] * r[i] + eps * eps) + (2.0 * param - 1.0) * r[i])
        elif code == HUBER:
            a = fabs(r[i])
            if a <= param:
                s += w[i] * r[i] * r[i] / (2.0 * param)
            else:
                s += w[i] * (a - 0.5 * param)
        else:
            s += w[i] * r[i] * r[i]
    return s


cdef void _residuals(const double[:, ::1] Z, const double[::1] y, const double[::1] theta, double[::1] r) noexcept nogil:
    cdef Py_ssize_t i, a, n = Z.shape[0], p = Z.shape[1]
    cdef double s
    for i in range(n):
        s = y[i]
        for a in range(p):
            s -= Z[i, a] * theta[a]
        r[i] = s


def irls(Z_in, y_in, w_in, int code, double param, double tol, int max_iter,
         double eps0, double eps_min, bint trace=False):
    """See ``_pycore.irls``."""
    cdef const double[:, ::1] Z = np.ascontiguousarray(Z_in, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef Py_ssize_t n = Z.shape[0], p = Z.shape[1], i, a
    theta_arr = np.zeros(p)
    new_arr = np.zeros(p)
    cdef double[::1] theta = theta_arr
    cdef double[::1] new = new_arr
    cdef double[::1] G = np.zeros(p * p)
    cdef double[::1] Gsave = np.zeros(p * p + p)
    cdef double[::1] lin = np.zeros(p)
    cdef double[::1] v = np.zeros(n)
    cdef double[::1] r = np.zeros(n)
    cdef int cap = max_iter + 64 if trace else 1
    hist_eps_arr = np.zeros(2 * cap + 2)
    hist_f_arr = np.zeros(2 * cap + 2)
    cdef double[::1] hist_eps = hist_eps_arr
    cdef double[::1] hist_f = hist_f_arr
    cdef Py_ssize_t nh = 0
    cdef int it = 0, status = 0, converged = 0
    cdef double eps, F, F_new, change, ai, mn, lin_c, sc = 0.0, sw = 0.0

    with nogil:
        if _weighted_solve(Z, w, y, lin, G, Gsave, theta) != 0:
            status = 2
        else:
            _residuals(Z, y, theta, r)
            if code == SQUARED:
                it = 1
                converged = 1
            else:
                for i in range(n):
                    sc += w[i] * fabs(r[i])
                    sw += w[i]
                sc = sc / sw if sw > 0 else 0.0
                if not sc > 0:
                    sc = 1.0
                eps_min = eps_min * sc
                eps = eps0 * sc if code == QUANTILE else 0.0
                F = _objective(code, param, r, w, eps)
                if trace:
                    hist_eps[nh] = eps
                    hist_f[nh] = F
                    nh += 1
                if code == QUANTILE:
                    lin_c = 2.0 * param - 1.0
                    for a in range(p):
                        lin[a] = 0.0
                    for i in range(n):
                        for a in range(p):
                            lin[a] += lin_c * Z[i, a] * w[i]
                while it < max_iter:
                    for i in range(n):
                        if code == QUANTILE:
                            v[i] = w[i] / sqrt(r[i] * r[i] + eps * eps)
                        else:
                            ai = fabs(r[i])
                            v[i] = w[i] / (param if ai <= param else ai)
                    it += 1
                    if _weighted_solve(Z, v, y, lin, G, Gsave, new) != 0:
                        status = 1
                        break
                    for a in range(p):
                        theta[a] = new[a]
                    _residuals(Z, y, theta, r)
                    F_new = _objective(code, param, r, w, eps)
                    if trace and nh < 2 * cap:
                        hist_eps[nh] = eps
                        hist_f[nh] = F_new
                        nh += 1
                    change = fabs(F - F_new)
                    F = F_new
                    mn = fabs(F) if fabs(F) > 1e-300 else 1e-300
                    if change <= tol * mn:
                        if code != QUANTILE or eps <= eps_min * 1.0000001:
                            converged = 1
                            break
                        eps = eps * 0.1
                        if eps < eps_min:
                            eps = eps_min
                        F = _objective(code, param, r, w, eps)
                        if trace and nh < 2 * cap:
                            hist_eps[nh] = eps
                            hist_f[nh] = F
                            nh += 1

    if status == 2:
        return np.zeros(p), np.nan, 0, False, 1, []
    obj = _objective(code, param, r, w, 0.0)
    hist = [(hist_eps_arr[j], hist_f_arr[j]) for j in range(nh)] if trace else []
    return theta_arr, obj, it, bool(converged), status, hist


# --- exact vertex refinement for the check loss ----------------------------

from libc.stdlib cimport malloc, free, qsort


cdef struct Break:
    double t
    Py_ssize_t i


cdef int _cmp_break(const void* a, const void* b) noexcept nogil:
    cdef double ta = (<Break*>a).t
    cdef double tb = (<Break*>b).t
    if ta < tb:
        return -1
    if ta > tb:
        return 1
    if (<Break*>a).i < (<Break*>b).i:
        return -1
    if (<Break*>a).i > (<Break*>b).i:
        return 1
    return 0


cdef int _lu(double* A, Py_ssize_t* perm, Py_ssize_t p) noexcept nogil:
    """In-place LU with partial pivoting: P A = L U, unit-diagonal L."""
    cdef Py_ssize_t i, j, m, piv
    cdef double big, tmp, f
    for i in range(p):
        perm[i] = i
    for j in range(p):
        piv = j
        big = fabs(A[j * p + j])
        for i in range(j + 1, p):
            if fabs(A[i * p + j]) > big:
                big = fabs(A[i * p + j])
                piv = i
        if big == 0.0:
            return 1
        if piv != j:
            for m in range(p):
                tmp = A[j * p + m]
                A[j * p + m] = A[piv * p + m]
                A[piv * p + m] = tmp
            m = perm[j]
            perm[j] = perm[piv]
            perm[piv] = m
        for i in range(j + 1, p):
            f = A[i * p + j] / A[j * p + j]
            A[i * p + j] = f
            for m in range(j + 1, p):
                A[i * p + m] -= f * A[j * p + m]
    return 0


cdef void _lu_solve(double* LU, Py_ssize_t* perm, double* b, double* x, Py_ssize_t p) noexcept nogil:
    """x = A^{-1} b."""
    cdef Py_ssize_t i, m
    cdef double s
    for i in range(p):
        s = b[perm[i]]
        for m in range(i):
            s -= LU[i * p + m] * x[m]
        x[i] = s
    for i in range(p - 1, -1, -1):
        s = x[i]
        for m in range(i + 1, p):
            s -= LU[i * p + m] * x[m]
        x[i] = s / LU[i * p + i]


cdef void _lu_solve_t(double* LU, Py_ssize_t* perm, double* b, double* q, double* x,
                      Py_ssize_t p) noexcept nogil:
    """x = A^{-T} b (q is scratch)."""
    cdef Py_ssize_t i, m
    cdef double s
    for i in range(p):
        s = b[i]
        for m in range(i):
            s -= LU[m * p + i] * q[m]
        q[i] = s / LU[i * p + i]
    for i in range(p - 1, -1, -1):
        s = q[i]
        for m in range(i + 1, p):
            s -= LU[m * p + i] * q[m]
        q[i] = s
    for i in range(p):
        x[perm[i]] = q[i]


cdef double _check_obj(double* r, const double[::1] w, double tau, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        if r[i] > 0:
            s += w[i] * 2.0 * tau * r[i]
        else:
            s += w[i] * 2.0 * (tau - 1.0) * r[i]
    return s


cdef int _basis_fit(const double[:, ::1] Z, const double[::1] y, Py_ssize_t* B, double* LU, Py_ssize_t* perm,
                    double* th, double* r, double* scratch, Py_ssize_t n, Py_ssize_t p) noexcept nogil:
    """Factor Z_B, solve for the interpolating coefficients, fill residuals."""
    cdef Py_ssize_t i, a
    cdef double s
    for i in range(p):
        for a in range(p):
            LU[i * p + a] = Z[B[i], a]
        scratch[i] = y[B[i]]
    if _lu(LU, perm, p) != 0:
        return 1
    _lu_solve(LU, perm, scratch, th, p)
    for i in range(n):
        s = y[i]
        for a in range(p):
            s -= Z[i, a] * th[a]
        r[i] = s
    for i in range(p):
        r[B[i]] = 0.0
    return 0


def vertex_polish(Z_in, y_in, w_in, double tau, theta_in, int max_pivots):
    """See ``_pycore.vertex_polish``."""
    cdef const double[:, ::1] Z = np.ascontiguousarray(Z_in, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    theta0 = np.ascontiguousarray(theta_in, dtype=np.float64)
    cdef Py_ssize_t n = Z.shape[0], p = Z.shape[1]
    r0 = np.asarray(y) - np.asarray(Z) @ theta0
    cdef Py_ssize_t[::1] order = np.argsort(np.abs(r0), kind="stable").astype(np.intp)

    th_arr = np.zeros(p)
    cdef double[::1] th = th_arr
    cdef double[::1] th_new = np.zeros(p)
    cdef double[::1] r = np.zeros(n)
    cdef double[::1] r_new = np.zeros(n)
    cdef double[::1] LU = np.zeros(p * p)
    cdef double[::1] Q = np.zeros(p * p)
    cdef double[::1] vec = np.zeros(p)
    cdef double[::1] u = np.zeros(p)
    cdef double[::1] s = np.zeros(p)
    cdef double[::1] q = np.zeros(p)
    cdef double[::1] az = np.zeros(p)
    cdef double[::1] g = np.zeros(2 * p)
    cdef double[::1] slope = np.zeros(n)
    cdef Py_ssize_t[::1] B = np.zeros(p, dtype=np.intp)
    cdef Py_ssize_t[::1] newB = np.zeros(p, dtype=np.intp)
    cdef Py_ssize_t[::1] perm = np.zeros(p, dtype=np.intp)
    cdef char[::1] basic = np.zeros(n, dtype=np.int8)
    cdef Break* brk = NULL
    cdef Py_ssize_t i, a, b, m, nb = 0, j, jj, nc, stop
    cdef double nrm, nrm0, dot, cp = 2.0 * tau, cm = 2.0 * (1.0 - tau), F = 0.0, F_new
    cdef double thresh, rtol, mx, sumw = 0.0, gmin, sigma, cum, val
    cdef int pivots = 0, optimal = 0, failed = 0

    with nogil:
        # greedy independent basis from the smallest residuals
        for m in range(n):
            i = order[m]
            nrm0 = 0.0
            for a in range(p):
                vec[a] = Z[i, a]
                nrm0 += vec[a] * vec[a]
            nrm0 = sqrt(nrm0)
            if nrm0 == 0.0:
                continue
            for b in range(nb):
                dot = 0.0
                for a in range(p):
                    dot += Q[b * p + a] * vec[a]
                for a in range(p):
                    vec[a] -= dot * Q[b * p + a]
            nrm = 0.0
            for a in range(p):
                nrm += vec[a] * vec[a]
            nrm = sqrt(nrm)
            if nrm > 1e-10 * nrm0:
                for a in range(p):
                    Q[nb * p + a] = vec[a] / nrm
                B[nb] = i
                nb += 1
                if nb == p:
                    break
        if nb < p:
            failed = 1
        elif _basis_fit(Z, y, &B[0], &LU[0], &perm[0], &th[0], &r[0], &vec[0], n, p) != 0:
            failed = 1
        else:
            brk = <Break*> malloc(n * sizeof(Break))
            F = _check_obj(&r[0], w, tau, n)
            for i in range(n):
                sumw += w[i]
            thresh = 1e-11 * (cp + cm) * (sumw + 1e-300)
            while pivots < max_pivots:
                for i in range(n):
                    basic[i] = 0
                for a in range(p):
                    basic[B[a]] = 1
                mx = 0.0
                for i in range(n):
                    if fabs(r[i]) > mx:
                        mx = fabs(r[i])
                rtol = 1e-12 * (mx + 1e-300)
                for a in range(p):
                    u[a] = 0.0
                    g[a] = 0.0
                    g[p + a] = 0.0
                for i in range(n):
                    if basic[i]:
                        continue
                    if r[i] > rtol:
                        val = w[i] * cp
                    elif r[i] < -rtol:
                        val = -w[i] * cm
                    else:
                        continue
                    for a in range(p):
                        u[a] += val * Z[i, a]
                # LU currently holds the factorisation of Z_B
                _lu_solve_t(&LU[0], &perm[0], &u[0], &q[0], &s[0], p)
                for a in range(p):
                    g[a] = s[a] + w[B[a]] * cp
                    g[p + a] = -s[a] + w[B[a]] * cm
                for i in range(n):
                    if basic[i] or r[i] > rtol or r[i] < -rtol:
                        continue
                    for a in range(p):
                        vec[a] = Z[i, a]
                    _lu_solve_t(&LU[0], &perm[0], &vec[0], &q[0], &az[0], p)
                    for a in range(p):
                        if az[a] > 0:
                            g[a] += w[i] * cp * az[a]
                            g[p + a] += w[i] * cm * az[a]
                        else:
                            g[a] += -w[i] * cm * az[a]
                            g[p + a] += -w[i] * cp * az[a]
                jj = 0
                gmin = g[0]
                for a in range(1, 2 * p):
                    if g[a] < gmin:
                        gmin = g[a]
                        jj = a
                if gmin >= -thresh:
                    optimal = 1
                    break
                sigma = 1.0 if jj < p else -1.0
                j = jj % p
                for a in range(p):
                    vec[a] = 0.0
                vec[j] = 1.0
                _lu_solve(&LU[0], &perm[0], &vec[0], &az[0], p)
                nc = 0
                for i in range(n):
                    dot = 0.0
                    for a in range(p):
                        dot += Z[i, a] * az[a]
                    slope[i] = sigma * dot
                    if basic[i] or slope[i] == 0.0:
                        continue
                    val = -r[i] / slope[i]
                    if val > 0:
                        brk[nc].t = val
                        brk[nc].i = i
                        nc += 1
                if nc == 0:
                    break
                qsort(brk, nc, sizeof(Break), _cmp_break)
                cum = gmin
                stop = nc - 1
                for m in range(nc):
                    cum += w[brk[m].i] * fabs(slope[brk[m].i]) * (cp + cm)
                    if cum >= 0.0:
                        stop = m
                        break
                for a in range(p):
                    newB[a] = B[a]
                newB[j] = brk[stop].i
                if _basis_fit(Z, y, &newB[0], &LU[0], &perm[0], &th_new[0], &r_new[0], &vec[0], n, p) != 0:
                    break
                F_new = _check_obj(&r_new[0], w, tau, n)
                pivots += 1
                if F_new > F:
                    break
                for a in range(p):
                    B[a] = newB[a]
                    th[a] = th_new[a]
                for i in range(n):
                    r[i] = r_new[i]
                F = F_new
            free(brk)

    if failed:
        return theta0, _check_obj_py(r0, np.asarray(w), tau), 0, False
    return th_arr, F, pivots, bool(optimal)


def _check_obj_py(r, w, tau):
    return float(np.sum(w * np.where(r > 0, 2.0 * tau * r, 2.0 * (tau - 1.0) * r)))

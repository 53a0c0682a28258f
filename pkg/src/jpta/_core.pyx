# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``jpta._fallback`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, fabs, INFINITY

cnp.import_array()

cdef double _TINY = 1e-300
cdef double LN2 = 0.6931471805599453


cdef void _project_rows(double[:, ::1] y, double[:, ::1] out, double[::1] work) noexcept nogil:
    cdef Py_ssize_t rows = y.shape[0], K = y.shape[1]
    cdef Py_ssize_t r, i, j
    cdef double css, theta, v, key
    for r in range(rows):
        # insertion sort, descending; K is small
        for i in range(K):
            key = y[r, i]
            j = i - 1
            while j >= 0 and work[j] < key:
                work[j + 1] = work[j]
                j -= 1
            work[j + 1] = key
        css = 0.0
        theta = 0.0
        for i in range(K):
            css += work[i]
            v = (css - 1.0) / (i + 1)
            if work[i] - v > 0:
                theta = v
        for i in range(K):
            v = y[r, i] - theta
            out[r, i] = v if v > 0 else 0.0


def project_simplex_rows(y):
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    out = np.empty_like(np.asarray(yv))
    cdef double[:, ::1] ov = out
    cdef double[::1] work = np.empty(yv.shape[1])
    _project_rows(yv, ov, work)
    return out


cdef double _surrogate(double[:, ::1] b, double[:, ::1] c, double[:, ::1] lin,
                       bint log_kind, double[::1] rates) noexcept nogil:
    cdef Py_ssize_t M = b.shape[0], K = b.shape[1], m, k
    cdef double s = 0.0
    for k in range(K):
        rates[k] = 0.0
    for m in range(M):
        for k in range(K):
            rates[k] += b[m, k] * c[m, k]
            s += lin[m, k] * b[m, k]
    for k in range(K):
        if log_kind:
            if rates[k] <= 0:
                return -INFINITY
            s += log(rates[k])
        else:
            s += rates[k]
    return s


cdef void _gradient(double[:, ::1] b, double[:, ::1] c, double[:, ::1] lin,
                    bint log_kind, double[::1] rates, double[:, ::1] g) noexcept nogil:
    cdef Py_ssize_t M = b.shape[0], K = b.shape[1], m, k
    cdef double r
    if log_kind:
        for k in range(K):
            rates[k] = 0.0
        for m in range(M):
            for k in range(K):
                rates[k] += b[m, k] * c[m, k]
    for m in range(M):
        for k in range(K):
            if log_kind:
                r = rates[k] if rates[k] > _TINY else _TINY
                g[m, k] = c[m, k] / r + lin[m, k]
            else:
                g[m, k] = c[m, k] + lin[m, k]


def sca_ascent(b0, c, lin, bint log_kind, double tol, int max_steps,
               double step_scale=1.0, double armijo=1e-4):
    cdef double[:, ::1] b = np.array(b0, dtype=np.float64, order="C")
    cdef double[:, ::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef double[:, ::1] lv = np.ascontiguousarray(lin, dtype=np.float64)
    cdef Py_ssize_t M = b.shape[0], K = b.shape[1], m, k, it
    cdef double[:, ::1] g = np.empty((M, K))
    cdef double[:, ::1] trial = np.empty((M, K))
    cdef double[:, ::1] bn = np.empty((M, K))
    cdef double[::1] rates = np.empty(K)
    cdef double[::1] work = np.empty(K)
    cdef double s, sn, t, gmax, gd, step, d
    trace = np.empty(max_steps + 1)
    cdef double[::1] tv = trace
    cdef Py_ssize_t n = 0
    cdef bint stalled = False

    with nogil:
        s = _surrogate(b, cv, lv, log_kind, rates)
        tv[n] = s
        n += 1
        _gradient(b, cv, lv, log_kind, rates, g)
        gmax = 0.0
        for m in range(M):
            for k in range(K):
                if fabs(g[m, k]) > gmax:
                    gmax = fabs(g[m, k])
        t = step_scale / (gmax if gmax > _TINY else _TINY)
        for it in range(max_steps):
            while True:
                for m in range(M):
                    for k in range(K):
                        trial[m, k] = b[m, k] + t * g[m, k]
                _project_rows(trial, bn, work)
                sn = _surrogate(bn, cv, lv, log_kind, rates)
                gd = 0.0
                for m in range(M):
                    for k in range(K):
                        gd += g[m, k] * (bn[m, k] - b[m, k])
                if sn >= s + armijo * gd:
                    break
                t *= 0.5
                if t < 1e-300:
                    stalled = True
                    break
            if stalled:
                break
            step = 0.0
            for m in range(M):
                for k in range(K):
                    d = fabs(bn[m, k] - b[m, k])
                    if d > step:
                        step = d
                    b[m, k] = bn[m, k]
            s = sn
            tv[n] = s
            n += 1
            if step < tol:
                break
            _gradient(b, cv, lv, log_kind, rates, g)
            t *= 2.0
    return np.asarray(b).copy(), trace[:n].copy()


def ttd_grid_argmax(coef, cos_tab, sin_tab, double rtol=1e-10):
    cdef double[:, ::1] are = np.ascontiguousarray(np.real(coef), dtype=np.float64)
    cdef double[:, ::1] aim = np.ascontiguousarray(np.imag(coef), dtype=np.float64)
    cdef double[:, ::1] ct = np.ascontiguousarray(cos_tab, dtype=np.float64)
    cdef double[:, ::1] st = np.ascontiguousarray(sin_tab, dtype=np.float64)
    cdef Py_ssize_t NT = are.shape[0], M = are.shape[1], T = ct.shape[0]
    cdef Py_ssize_t i, t, m
    cdef double v, bestv, tol
    vals_arr = np.empty(T)
    cdef double[::1] vals = vals_arr
    idx = np.empty(NT, dtype=np.intp)
    val = np.empty(NT)
    cdef Py_ssize_t[::1] iv = idx
    cdef double[::1] vv = val
    with nogil:
        for i in range(NT):
            bestv = -INFINITY
            tol = 0.0
            for m in range(M):
                tol += (are[i, m] * are[i, m] + aim[i, m] * aim[i, m]) ** 0.5
            tol *= rtol
            for t in range(T):
                v = 0.0
                for m in range(M):
                    v += are[i, m] * ct[t, m] + aim[i, m] * st[t, m]
                vals[t] = v
                if v > bestv:
                    bestv = v
            # first grid point within the tie tolerance of the maximum
            for t in range(T):
                if vals[t] >= bestv - tol:
                    iv[i] = t
                    vv[i] = vals[t]
                    break
    return idx, val


def waterfill_level(inv_gain, double budget, double rtol):
    cdef double[::1] g = np.ascontiguousarray(inv_gain, dtype=np.float64)
    cdef Py_ssize_t n = g.shape[0], i
    cdef double lo = g[0], hi = g[0], mid, tot
    with nogil:
        for i in range(n):
            if g[i] < lo:
                lo = g[i]
            if g[i] > hi:
                hi = g[i]
        hi += budget
        while hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            tot = 0.0
            for i in range(n):
                if mid > g[i]:
                    tot += mid - g[i]
            if tot > budget:
                hi = mid
            else:
                lo = mid
    return 0.5 * (lo + hi)


cdef double _user_level(double[::1] g, Py_ssize_t[::1] owner, Py_ssize_t k,
                        double eta, double lo) noexcept nogil:
    cdef Py_ssize_t n = g.shape[0], i
    cdef double hi = 2.0 * lo, mid, r
    cdef int it
    while True:
        r = 0.0
        for i in range(n):
            if owner[i] == k and hi > g[i]:
                r += log(hi / g[i])
        if hi * r / LN2 >= eta:
            break
        hi *= 2.0
    for it in range(200):
        mid = 0.5 * (lo + hi)
        r = 0.0
        for i in range(n):
            if owner[i] == k and mid > g[i]:
                r += log(mid / g[i])
        if mid * r / LN2 > eta:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


cdef double _levels_total(double[::1] g, Py_ssize_t[::1] owner, double[::1] lows,
                          double eta, double[::1] mu) noexcept nogil:
    cdef Py_ssize_t K = mu.shape[0], n = g.shape[0], k, i
    cdef double tot = 0.0
    for k in range(K):
        mu[k] = _user_level(g, owner, k, eta, lows[k])
    for i in range(n):
        if mu[owner[i]] > g[i]:
            tot += mu[owner[i]] - g[i]
    return tot



def log_power_levels(inv_gain, owner, int K, double budget, double rtol):
    cdef double[::1] g = np.ascontiguousarray(inv_gain, dtype=np.float64)
    cdef Py_ssize_t[::1] ow = np.ascontiguousarray(owner, dtype=np.intp)
    lows_arr = np.full(K, np.inf)
    np.minimum.at(lows_arr, np.asarray(ow), np.asarray(g))
    cdef double[::1] lows = lows_arr
    mu_arr = np.empty(K)
    cdef double[::1] mu = mu_arr
    cdef double lo = 1.0, hi = 1.0, mid
    with nogil:
        while _levels_total(g, ow, lows, lo, mu) > budget:
            lo *= 0.5
        while _levels_total(g, ow, lows, hi, mu) < budget:
            hi *= 2.0
        while hi - lo > rtol * hi:
            if hi / lo > 4.0:
                mid = (lo * hi) ** 0.5
            else:
                mid = 0.5 * (lo + hi)
            if _levels_total(g, ow, lows, mid, mu) > budget:
                hi = mid
            else:
                lo = mid
        _levels_total(g, ow, lows, 0.5 * (lo + hi), mu)
    return mu_arr

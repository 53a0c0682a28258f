"""Pure-Python (numpy) implementations of the hot kernels.

Every function here has a compiled twin in ``_core.pyx`` with the same
signature and results; :mod:`jpta.kernels` picks one at import time.
"""

import numpy as np

_TINY = 1e-300


def project_simplex_rows(y):
    """Euclidean projection of each row of ``y`` onto the probability simplex."""
    y = np.asarray(y, dtype=float)
    rows, K = y.shape
    u = -np.sort(-y, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, K + 1)
    cond = u - css / ind > 0
    last = K - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(rows), last] / (last + 1)
    return np.maximum(y - theta[:, None], 0.0)


def _surrogate(b, c, lin, log_kind):
    rates = (b * c).sum(axis=0)
    if log_kind:
        if np.any(rates <= 0):
            return -np.inf
        head = np.log(rates).sum()
    else:
        head = rates.sum()
    return head + (lin * b).sum()


def _gradient(b, c, lin, log_kind):
    if log_kind:
        rates = np.maximum((b * c).sum(axis=0), _TINY)
        return c / rates[None, :] + lin
    return c + lin


def sca_ascent(b0, c, lin, log_kind, tol, max_steps, step_scale=1.0, armijo=1e-4):
    """Projected-gradient ascent with backtracking on one SCA surrogate.

    Maximizes ``sum_k F(sum_m b[m,k] c[m,k]) + sum(lin * b)`` over the product
    of per-row simplices, where ``F`` is the identity or ``log``. Returns the
    final point and the surrogate value after every accepted step.
    """
    b = np.array(b0, dtype=float)
    c = np.asarray(c, dtype=float)
    lin = np.asarray(lin, dtype=float)
    s = _surrogate(b, c, lin, log_kind)
    trace = [s]
    g = _gradient(b, c, lin, log_kind)
    t = step_scale / max(np.abs(g).max(), _TINY)
    for _ in range(max_steps):
        while True:
            bn = project_simplex_rows(b + t * g)
            d = bn - b
            sn = _surrogate(bn, c, lin, log_kind)
            if sn >= s + armijo * (g * d).sum():
                break
            t *= 0.5
            if t < 1e-300:
                return b, np.array(trace)
        step = np.abs(d).max()
        b, s = bn, sn
        trace.append(s)
        if step < tol:
            break
        g = _gradient(b, c, lin, log_kind)
        t *= 2.0
    return b, np.array(trace)


def ttd_grid_argmax(coef, cos_tab, sin_tab, rtol=1e-10):
    """For each row ``i`` of ``coef`` find ``argmax_t Re sum_m coef[i,m] exp(-j theta[t,m])``.

    ``cos_tab``/``sin_tab`` hold ``cos``/``sin`` of ``theta`` (grid x subband).
    Values within ``rtol * sum_m |coef[i,m]|`` of the maximum count as ties,
    which resolve to the smallest grid index.
    """
    coef = np.asarray(coef)
    vals = cos_tab @ coef.real.T + sin_tab @ coef.imag.T
    best = vals.max(axis=0)
    tol = rtol * np.abs(coef).sum(axis=1)
    idx = np.argmax(vals >= best - tol, axis=0)
    return idx, vals[idx, np.arange(coef.shape[0])]


def waterfill_level(inv_gain, budget, rtol):
    """Bisection for ``mu`` with ``sum(max(mu - inv_gain, 0)) = budget``."""
    inv_gain = np.asarray(inv_gain, dtype=float)
    lo = inv_gain.min()
    hi = inv_gain.max() + budget
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if np.maximum(mid - inv_gain, 0.0).sum() > budget:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _user_levels(inv_gain, owner, K, eta):
    """Per-user water level ``mu_k`` solving ``mu_k * r_k(mu_k) = eta``.

    ``r_k(mu) = sum over user k's subbands of log2(max(mu / inv_gain, 1))``.
    """
    lo = np.full(K, np.inf)
    np.minimum.at(lo, owner, inv_gain)
    hi = lo * 2.0
    while True:
        mu = hi[owner]
        r = np.zeros(K)
        np.add.at(r, owner, np.log2(np.maximum(mu / inv_gain, 1.0)))
        short = hi * r < eta
        if not short.any():
            break
        hi = np.where(short, hi * 2.0, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = np.zeros(K)
        np.add.at(r, owner, np.log2(np.maximum(mid[owner] / inv_gain, 1.0)))
        above = mid * r > eta
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        if np.all(hi - lo <= 1e-15 * hi):
            break
    return 0.5 * (lo + hi)


def log_power_levels(inv_gain, owner, K, budget, rtol):
    """Water levels maximizing ``sum_k log r_k`` under a total power budget.

    Outer bisection (in log space) on the common product ``eta = mu_k r_k``
    until the implied total power matches ``budget``.
    """
    inv_gain = np.asarray(inv_gain, dtype=float)
    owner = np.asarray(owner, dtype=np.intp)

    def total(eta):
        mu = _user_levels(inv_gain, owner, K, eta)
        return np.maximum(mu[owner] - inv_gain, 0.0).sum(), mu

    lo, hi = 1.0, 1.0
    while total(lo)[0] > budget:
        lo *= 0.5
    while total(hi)[0] < budget:
        hi *= 2.0
    while hi - lo > rtol * hi:
        mid = np.sqrt(lo * hi) if hi / lo > 4.0 else 0.5 * (lo + hi)
        if total(mid)[0] > budget:
            hi = mid
        else:
            lo = mid
    return total(0.5 * (lo + hi))[1]

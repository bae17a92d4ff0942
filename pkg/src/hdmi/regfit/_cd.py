"""Compiled coordinate-descent kernels for L1-penalized weighted least squares.

All kernels take the design in CSC form (``indptr, indices, data``) together
with per-column ``center`` and ``scale``; the standardized column is
``(x - center) / scale`` but is never materialized.  Centering is carried as a
scalar offset on the residual so sparse columns stay sparse.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def soft_threshold(u, t):
    if u > t:
        return u - t
    if u < -t:
        return u + t
    return 0.0


@njit(cache=True)
def column_moments(indptr, indices, data, w):
    """Weighted first and second moments of every column: (sum w x, sum w x^2)."""
    p = indptr.shape[0] - 1
    a = np.zeros(p)
    q = np.zeros(p)
    for j in range(p):
        s1 = 0.0
        s2 = 0.0
        for k in range(indptr[j], indptr[j + 1]):
            wx = w[indices[k]] * data[k]
            s1 += wx
            s2 += wx * data[k]
        a[j] = s1
        q[j] = s2
    return a, q


@njit(cache=True)
def linear_predictor(indptr, indices, data, center, scale, beta, b0, n):
    """b0 + standardized design times beta."""
    eta = np.empty(n)
    shift = b0
    for j in range(beta.shape[0]):
        if beta[j] != 0.0:
            shift -= beta[j] * center[j] / scale[j]
    for i in range(n):
        eta[i] = shift
    for j in range(beta.shape[0]):
        bj = beta[j]
        if bj == 0.0:
            continue
        f = bj / scale[j]
        for k in range(indptr[j], indptr[j + 1]):
            eta[indices[k]] += f * data[k]
    return eta


@njit(cache=True)
def weighted_gradient(indptr, indices, data, center, scale, w, r, cols):
    """sum_i w_i * xstd_ij * r_i for the listed columns (others left at 0)."""
    p = indptr.shape[0] - 1
    g = np.zeros(p)
    swr = 0.0
    for i in range(r.shape[0]):
        swr += w[i] * r[i]
    for jj in range(cols.shape[0]):
        j = cols[jj]
        s = 0.0
        for k in range(indptr[j], indptr[j + 1]):
            i = indices[k]
            s += w[i] * data[k] * r[i]
        g[j] = (s - center[j] * swr) / scale[j]
    return g


@njit(cache=True)
def _sweep(cols, indptr, indices, data, center, scale, w, rr, state, beta, lam_pf, a, v, W):
    # state = [c (residual offset), S_wr (sum w*rr)]
    max_change = 0.0
    for jj in range(cols.shape[0]):
        j = cols[jj]
        vj = v[j]
        if vj <= 0.0:
            continue
        c = state[0]
        s = 0.0
        for k in range(indptr[j], indptr[j + 1]):
            i = indices[k]
            s += w[i] * data[k] * rr[i]
        xr = s + c * a[j]
        wr = state[1] + c * W
        g = (xr - center[j] * wr) / scale[j]
        old = beta[j]
        new = soft_threshold(g + vj * old, lam_pf[j]) / vj
        d = new - old
        if d != 0.0:
            beta[j] = new
            f = d / scale[j]
            for k in range(indptr[j], indptr[j + 1]):
                rr[indices[k]] -= f * data[k]
            state[1] -= f * a[j]
            state[0] += f * center[j]
            ch = vj * d * d
            if ch > max_change:
                max_change = ch
    return max_change


@njit(cache=True)
def wls_lasso(indptr, indices, data, center, scale, w, r, beta, b0, lam_pf,
              eligible, fit_intercept, tol, max_sweeps):
    """Minimize 0.5 * sum_i w_i (r_i - d0 - xstd_i . d)^2 + sum_j lam_pf_j |beta_j + d_j|.

    ``r`` is the current working residual (response minus current fit); it is
    updated in place together with ``beta`` (standardized scale).  Only
    ``eligible`` columns are visited.  Returns (new intercept, sweeps used).
    Convergence: max_j v_j * delta_j^2 < tol over a full sweep of eligible columns.
    """
    n = r.shape[0]
    W = 0.0
    for i in range(n):
        W += w[i]
    p = beta.shape[0]
    # moments only for eligible columns; others are never visited
    a = np.zeros(p)
    v = np.zeros(p)
    for j in range(p):
        if not eligible[j]:
            continue
        s1 = 0.0
        s2 = 0.0
        for k in range(indptr[j], indptr[j + 1]):
            wx = w[indices[k]] * data[k]
            s1 += wx
            s2 += wx * data[k]
        a[j] = s1
        sj = scale[j]
        v[j] = (s2 - 2.0 * center[j] * s1 + center[j] * center[j] * W) / (sj * sj)
    rr = r.copy()
    state = np.zeros(2)
    swr = 0.0
    for i in range(n):
        swr += w[i] * rr[i]
    state[1] = swr

    sweeps = 0
    n_elig = 0
    for j in range(p):
        if eligible[j]:
            n_elig += 1
    elig = np.empty(n_elig, dtype=np.int64)
    m = 0
    for j in range(p):
        if eligible[j]:
            elig[m] = j
            m += 1

    while sweeps < max_sweeps:
        ch = _sweep(elig, indptr, indices, data, center, scale, w, rr, state, beta, lam_pf, a, v, W)
        sweeps += 1
        if fit_intercept and W > 0.0:
            d0 = (state[1] + state[0] * W) / W
            b0 += d0
            state[0] -= d0
            if W * d0 * d0 > ch:
                ch = W * d0 * d0
        if ch < tol:
            break
        # inner loop on the active set
        n_act = 0
        for jj in range(n_elig):
            if beta[elig[jj]] != 0.0:
                n_act += 1
        act = np.empty(n_act, dtype=np.int64)
        m = 0
        for jj in range(n_elig):
            if beta[elig[jj]] != 0.0:
                act[m] = elig[jj]
                m += 1
        while sweeps < max_sweeps:
            ch = _sweep(act, indptr, indices, data, center, scale, w, rr, state, beta, lam_pf, a, v, W)
            sweeps += 1
            if fit_intercept and W > 0.0:
                d0 = (state[1] + state[0] * W) / W
                b0 += d0
                state[0] -= d0
                if W * d0 * d0 > ch:
                    ch = W * d0 * d0
            if ch < tol:
                break

    c = state[0]
    for i in range(n):
        r[i] = rr[i] + c
    return b0, sweeps

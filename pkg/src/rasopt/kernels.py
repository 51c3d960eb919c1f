"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public names (``mc_batch``, ``mc_coefficients``, ``enforce_bound``) are
bound at import time to the numba versions unless ``RASOPT_DISABLE_NUMBA``
is set; both variants stay importable under ``*_numba`` / ``*_numpy`` so
they can be compared directly.

Matrix-completion data is passed in compressed-column form: the observed
rows of column ``c`` are ``row_idx[col_ptr[c]:col_ptr[c + 1]]`` with values
``vals[...]`` at the same positions.

Status codes returned by the MC kernels: ``OK``, ``EMPTY`` (column with no
observations), ``SINGULAR`` (normal matrix not numerically positive definite).
"""

import numpy as np

from ._accel import USE_NUMBA, njit

OK = 0
EMPTY = 1
SINGULAR = 2

# pivot threshold for the r x r normal-equation Cholesky, relative to max diag
_PIVOT_RTOL = 1e-12


# --------------------------------------------------------------------------
# matrix completion: per-column ridge solves
# --------------------------------------------------------------------------


@njit(cache=True)
def _ridge_solve_nb(U, rows, z, lam, a):
    r = U.shape[1]
    m = rows.shape[0]
    A = np.zeros((r, r))
    b = np.zeros(r)
    for k in range(m):
        i = rows[k]
        zk = z[k]
        for p in range(r):
            up = U[i, p]
            b[p] += up * zk
            for q in range(p + 1):
                A[p, q] += up * U[i, q]
    dmax = 0.0
    for p in range(r):
        A[p, p] += lam
        if A[p, p] > dmax:
            dmax = A[p, p]
    if dmax <= 0.0:
        return False
    # in-place lower Cholesky
    for j in range(r):
        s = A[j, j]
        for k in range(j):
            s -= A[j, k] * A[j, k]
        if s <= _PIVOT_RTOL * dmax:
            return False
        d = np.sqrt(s)
        A[j, j] = d
        for i in range(j + 1, r):
            t = A[i, j]
            for k in range(j):
                t -= A[i, k] * A[j, k]
            A[i, j] = t / d
    for i in range(r):
        t = b[i]
        for k in range(i):
            t -= A[i, k] * a[k]
        a[i] = t / A[i, i]
    for i in range(r - 1, -1, -1):
        t = a[i]
        for k in range(i + 1, r):
            t -= A[k, i] * a[k]
        a[i] = t / A[i, i]
    return True


@njit(cache=True)
def mc_batch_numba(U, col_ptr, row_idx, vals, cols, lam, want_grad):
    n, r = U.shape
    grad = np.zeros((n, r))
    a = np.zeros(r)
    cost = 0.0
    nb = cols.shape[0]
    for t in range(nb):
        c = cols[t]
        lo = col_ptr[c]
        hi = col_ptr[c + 1]
        if hi == lo:
            return 0.0, grad, c, EMPTY
        rows = row_idx[lo:hi]
        z = vals[lo:hi]
        if not _ridge_solve_nb(U, rows, z, lam, a):
            return 0.0, grad, c, SINGULAR
        for k in range(hi - lo):
            i = rows[k]
            res = -z[k]
            for p in range(r):
                res += U[i, p] * a[p]
            cost += res * res
            if want_grad:
                for p in range(r):
                    grad[i, p] += 2.0 * res * a[p]
    cost /= nb
    if want_grad:
        for i in range(n):
            for p in range(r):
                grad[i, p] /= nb
    return cost, grad, -1, OK


@njit(cache=True)
def mc_coefficients_numba(U, col_ptr, row_idx, vals, cols, lam):
    r = U.shape[1]
    out = np.zeros((cols.shape[0], r))
    a = np.zeros(r)
    for t in range(cols.shape[0]):
        c = cols[t]
        lo = col_ptr[c]
        hi = col_ptr[c + 1]
        if hi == lo:
            return out, c, EMPTY
        if not _ridge_solve_nb(U, row_idx[lo:hi], vals[lo:hi], lam, a):
            return out, c, SINGULAR
        out[t, :] = a
    return out, -1, OK


def _ridge_solve_np(U_obs, z, lam):
    r = U_obs.shape[1]
    A = U_obs.T @ U_obs + lam * np.eye(r)
    dmax = A.diagonal().max()
    if dmax <= 0.0:
        return None
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None
    if np.min(L.diagonal() ** 2) <= _PIVOT_RTOL * dmax:
        return None
    y = np.linalg.solve(L, U_obs.T @ z)
    return np.linalg.solve(L.T, y)


def mc_batch_numpy(U, col_ptr, row_idx, vals, cols, lam, want_grad):
    n, r = U.shape
    grad = np.zeros((n, r))
    cost = 0.0
    for c in cols:
        lo, hi = col_ptr[c], col_ptr[c + 1]
        if hi == lo:
            return 0.0, grad, int(c), EMPTY
        rows = row_idx[lo:hi]
        U_obs = U[rows]
        a = _ridge_solve_np(U_obs, vals[lo:hi], lam)
        if a is None:
            return 0.0, grad, int(c), SINGULAR
        res = U_obs @ a - vals[lo:hi]
        cost += res @ res
        if want_grad:
            np.add.at(grad, rows, 2.0 * np.outer(res, a))
    nb = len(cols)
    if want_grad:
        grad /= nb
    return cost / nb, grad, -1, OK


def mc_coefficients_numpy(U, col_ptr, row_idx, vals, cols, lam):
    out = np.zeros((len(cols), U.shape[1]))
    for t, c in enumerate(cols):
        lo, hi = col_ptr[c], col_ptr[c + 1]
        if hi == lo:
            return out, int(c), EMPTY
        a = _ridge_solve_np(U[row_idx[lo:hi]], vals[lo:hi], lam)
        if a is None:
            return out, int(c), SINGULAR
        out[t] = a
    return out, -1, OK


# --------------------------------------------------------------------------
# variable-beta: raise row/column statistics until sqrt(p_i q_j) >= G_ij^2
# --------------------------------------------------------------------------


@njit(cache=True)
def enforce_bound_numba(p, q, G):
    n, r = G.shape
    p_hat = p.copy()
    q_hat = q.copy()
    for i in range(n):
        best = -1.0
        for j in range(r):
            g2 = G[i, j] * G[i, j]
            if np.sqrt(p[i]) * np.sqrt(q[j]) < g2 and g2 > best:
                best = g2
        if best > p_hat[i]:
            p_hat[i] = best
    for j in range(r):
        best = -1.0
        for i in range(n):
            g2 = G[i, j] * G[i, j]
            if np.sqrt(p_hat[i]) * np.sqrt(q[j]) < g2 and g2 > best:
                best = g2
        if best > q_hat[j]:
            q_hat[j] = best
    return p_hat, q_hat


def enforce_bound_numpy(p, q, G):
    g2 = G * G
    viol = np.outer(np.sqrt(p), np.sqrt(q)) < g2
    p_hat = np.maximum(p, np.where(viol, g2, -1.0).max(axis=1))
    viol = np.outer(np.sqrt(p_hat), np.sqrt(q)) < g2
    q_hat = np.maximum(q, np.where(viol, g2, -1.0).max(axis=0))
    return p_hat, q_hat


if USE_NUMBA:
    mc_batch = mc_batch_numba
    mc_coefficients = mc_coefficients_numba
    enforce_bound = enforce_bound_numba
else:
    mc_batch = mc_batch_numpy
    mc_coefficients = mc_coefficients_numpy
    enforce_bound = enforce_bound_numpy

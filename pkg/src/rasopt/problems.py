"""Objective functions: PCA, ICA by joint diagonalisation, and matrix completion.

Every problem exposes ``cost(U, batch=None)`` and ``grad(U, batch=None)``
where ``batch`` is an integer index array into ``problem.population``-style
indices (data columns for PCA/MC, matrices for ICA).  ``batch=None`` means
the full data set.  Gradients are Riemannian: the Euclidean gradient
projected onto the tangent space of ``problem.manifold``.
"""

from __future__ import annotations

import logging

import numpy as np

from . import kernels
from .errors import ColdColumn, EmptyColumn, ShapeMismatch, SingularSystem
from .manifolds import Grassmann, Stiefel

__all__ = ["PcaProblem", "IcaProblem", "McProblem", "fd_directional_check"]

log = logging.getLogger(__name__)


def _as_batch(batch, size):
    if batch is None:
        return None
    b = np.asarray(batch, dtype=np.int64).reshape(-1)
    if b.size == 0:
        raise ValueError("empty batch")
    if b.min() < 0 or b.max() >= size:
        raise IndexError(f"batch index out of range [0, {size})")
    return b


class PcaProblem:
    """``min -1/N sum_i z_i^T U U^T z_i`` over data columns ``z_i`` of ``Z`` (n x N)."""

    name = "pca"

    def __init__(self, Z, manifold):
        Z = np.array(Z, dtype=float)
        if Z.ndim != 2 or Z.shape[1] < 1:
            raise ShapeMismatch("Z must be a non-empty n x N matrix")
        if not np.all(np.isfinite(Z)):
            raise ValueError("Z contains non-finite entries")
        if manifold.n != Z.shape[0]:
            raise ShapeMismatch(f"manifold ambient size {manifold.n} != data dimension {Z.shape[0]}")
        Z.setflags(write=False)
        self.Z = Z
        self.manifold = manifold
        self.n, self.N = Z.shape
        self._cov = None

    @property
    def population(self):
        return np.arange(self.N)

    @property
    def cov(self):
        """Second-moment matrix ``Z Z^T / N``."""
        if self._cov is None:
            self._cov = self.Z @ self.Z.T / self.N
        return self._cov

    def cost(self, U, batch=None):
        self.manifold._check(U)
        b = _as_batch(batch, self.N)
        if b is None:
            return -float(np.sum(U * (self.cov @ U)))
        P = U.T @ self.Z[:, b]
        return -float(np.sum(P * P)) / b.size

    def egrad(self, U, batch=None):
        b = _as_batch(batch, self.N)
        if b is None:
            return -2.0 * (self.cov @ U)
        Zb = self.Z[:, b]
        return (-2.0 / b.size) * (Zb @ (Zb.T @ U))

    def grad(self, U, batch=None):
        self.manifold._check(U)
        return self.manifold.proj(U, self.egrad(U, batch))

    def optimum(self):
        """Optimal value and an optimal point from the dense eigendecomposition."""
        w, V = np.linalg.eigh(self.cov)
        r = self.manifold.r
        U = V[:, ::-1][:, :r].copy()
        return -float(np.sum(w[::-1][:r])), U


class IcaProblem:
    """``min -1/N sum_i ||diag(U^T C_i U)||^2`` over a stack of symmetric matrices."""

    name = "ica"

    def __init__(self, C, manifold=None, symmetrize=False, check_tol=1e-10):
        C = np.array(C, dtype=float)
        if C.ndim != 3 or C.shape[1] != C.shape[2] or C.shape[0] < 1:
            raise ShapeMismatch("C must be a stack of square matrices with shape (N, n, n)")
        if symmetrize:
            C = (C + C.transpose(0, 2, 1)) / 2
        asym = np.abs(C - C.transpose(0, 2, 1)).max()
        if asym > check_tol:
            raise ValueError(f"matrices are not symmetric (max asymmetry {asym:.3g})")
        if not np.all(np.isfinite(C)):
            raise ValueError("C contains non-finite entries")
        self.N, self.n = C.shape[0], C.shape[1]
        if manifold is None:
            manifold = Stiefel(self.n, self.n)
        if not isinstance(manifold, Stiefel):
            raise ValueError("the joint diagonalisation problem is posed on the Stiefel manifold")
        if manifold.n != self.n:
            raise ShapeMismatch(f"manifold ambient size {manifold.n} != matrix size {self.n}")
        C.setflags(write=False)
        self.C = C
        self.manifold = manifold

    @property
    def population(self):
        return np.arange(self.N)

    def _stack(self, batch):
        b = _as_batch(batch, self.N)
        return self.C if b is None else self.C[b]

    def cost(self, U, batch=None):
        self.manifold._check(U)
        Cb = self._stack(batch)
        d = np.einsum("ik,bij,jk->bk", U, Cb, U, optimize=True)
        return -float(np.sum(d * d)) / Cb.shape[0]

    def egrad(self, U, batch=None):
        Cb = self._stack(batch)
        CU = Cb @ U
        d = np.einsum("ik,bik->bk", U, CU)
        return (-4.0 / Cb.shape[0]) * np.einsum("bik,bk->ik", CU, d)

    def grad(self, U, batch=None):
        self.manifold._check(U)
        return self.manifold.proj(U, self.egrad(U, batch))


class McProblem:
    """Rank-r completion of an ``n x N`` matrix from observed entries.

    The cost for column ``i`` is the squared residual of the ridge solution
    ``a_i = argmin ||U_O a - z_O||^2 + lam ||a||^2`` over its observed rows
    ``O``.  The gradient treats ``a_i`` as fixed, which is exact when
    ``lam = 0``.

    Args:
        rows, cols, vals: 0-based coordinates and values of the observations.
        shape: ``(n, N)``.
        manifold: a :class:`Grassmann` instance fixing the rank.
        lam: ridge parameter of the inner least-squares problem.
    """

    name = "mc"

    def __init__(self, rows, cols, vals, shape, manifold, lam=0.01):
        n, N = (int(s) for s in shape)
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        vals = np.asarray(vals, dtype=float).reshape(-1)
        if not rows.size == cols.size == vals.size:
            raise ShapeMismatch("rows, cols and vals must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= N):
            raise IndexError("observation index out of range")
        if not np.all(np.isfinite(vals)):
            raise ValueError("observed values must be finite")
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        order = np.lexsort((rows, cols))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if np.any(dup):
                k = int(np.argmax(dup))
                raise ValueError(f"duplicate observation at ({rows[k]}, {cols[k]})")
        if not isinstance(manifold, Grassmann):
            raise ValueError("matrix completion is posed on the Grassmann manifold")
        if manifold.n != n:
            raise ShapeMismatch(f"manifold ambient size {manifold.n} != row count {n}")
        self.n, self.N = n, N
        self.lam = float(lam)
        self.manifold = manifold
        self.rows, self.cols, self.vals = rows, cols, vals
        counts = np.bincount(cols, minlength=N)
        self.col_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.counts = counts
        for a in (self.rows, self.cols, self.vals, self.col_ptr):
            a.setflags(write=False)

    @property
    def population(self):
        """Columns with at least one observation."""
        return np.flatnonzero(self.counts)

    @property
    def nnz(self):
        return self.rows.size

    def _cols(self, batch):
        if batch is None:
            return self.population
        return _as_batch(batch, self.N)

    def _raise(self, col, status):
        if status == kernels.EMPTY:
            raise EmptyColumn(f"column {col} has no observations")
        raise SingularSystem(f"normal equations of column {col} are singular (lam={self.lam})")

    def _run(self, U, cols, want_grad):
        U = np.ascontiguousarray(U, dtype=float)
        cost, g, bad, status = kernels.mc_batch(
            U, self.col_ptr, self.rows, self.vals, cols, self.lam, want_grad
        )
        if status != kernels.OK:
            self._raise(bad, status)
        return cost, g

    def coefficients(self, U, cols):
        """Ridge coefficients ``a_i`` for each requested column, shape ``(len(cols), r)``."""
        self.manifold._check(U)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        A, bad, status = kernels.mc_coefficients(
            np.ascontiguousarray(U, dtype=float), self.col_ptr, self.rows, self.vals, cols, self.lam
        )
        if status != kernels.OK:
            self._raise(bad, status)
        return A

    def cost(self, U, batch=None, coeffs=None):
        """Mean squared residual over the batch columns.

        With ``coeffs`` given (rows aligned with the batch), those are used
        in place of the per-column ridge solutions.
        """
        self.manifold._check(U)
        cols = self._cols(batch)
        if coeffs is None:
            return float(self._run(U, cols, False)[0])
        total = 0.0
        for a, c in zip(coeffs, cols):
            lo, hi = self.col_ptr[c], self.col_ptr[c + 1]
            res = U[self.rows[lo:hi]] @ a - self.vals[lo:hi]
            total += res @ res
        return total / len(cols)

    def egrad(self, U, batch=None):
        return self._run(U, self._cols(batch), True)[1]

    def grad(self, U, batch=None):
        self.manifold._check(U)
        return self.manifold.proj(U, self.egrad(U, batch))

    def predict(self, U, rows, cols):
        """Model values ``(U a_c)_row`` with ``a_c`` fitted on this problem's observations."""
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        uniq, inv = np.unique(cols, return_inverse=True)
        A = self.coefficients(U, uniq)
        return np.einsum("kp,kp->k", U[rows], A[inv])

    def rmse(self, U, holdout=None):
        """Root mean squared error on ``holdout = (rows, cols, vals)``.

        Holdout entries whose column has no training observation are skipped
        with a warning.  ``holdout=None`` scores the training entries.
        """
        if holdout is None:
            rows, cols, vals = self.rows, self.cols, self.vals
        else:
            rows, cols, vals = (np.asarray(a).reshape(-1) for a in holdout)
        cold = self.counts[cols] == 0
        if np.any(cold):
            err = ColdColumn(f"{int(cold.sum())} holdout entries in columns without training data")
            log.warning("%s; skipped", err)
            rows, cols, vals = rows[~cold], cols[~cold], vals[~cold]
        if rows.size == 0:
            return float("nan")
        pred = self.predict(U, rows, cols)
        return float(np.sqrt(np.mean((pred - vals) ** 2)))


def fd_directional_check(cost, grad, manifold, U, eta, h=1e-6):
    """Relative error between a central difference along ``eta`` and ``<grad(U), eta>``.

    The difference quotient follows the retraction curve
    ``h -> R_U(h * eta)``, so it measures the Riemannian directional
    derivative.  Returns ``|fd - analytic| / max(1, |analytic|)``.
    """
    if not np.any(eta):
        raise ValueError("direction must be nonzero")
    fd = (cost(manifold.retr(U, h * eta)) - cost(manifold.retr(U, -h * eta))) / (2 * h)
    analytic = manifold.inner(U, grad(U), eta)
    return abs(fd - analytic) / max(1.0, abs(analytic))

"""Stiefel and Grassmann manifolds with the QR retraction.

Points are plain ``(n, r)`` float arrays with orthonormal columns. A
Grassmann point is stored through one orthonormal representative of the
subspace; use :meth:`Grassmann.same_point` to compare subspaces.
"""

from __future__ import annotations

import numpy as np

from .errors import RankDeficient, ShapeMismatch

__all__ = ["qf", "Stiefel", "Grassmann", "make_manifold", "MEMBERSHIP_TOL"]

MEMBERSHIP_TOL = 1e-10
RANK_RTOL = 1e-12


def qf(A: np.ndarray) -> np.ndarray:
    """Orthonormal factor of the thin QR decomposition of ``A``.

    Columns are sign-normalised so that the triangular factor has a
    positive diagonal, which makes the result unique for full-rank ``A``.

    Raises:
        RankDeficient: if some ``|R_ii| < 1e-12 * ||A||_F``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[1] > A.shape[0]:
        raise ShapeMismatch(f"qf needs a tall matrix, got shape {A.shape}")
    Q, R = np.linalg.qr(A)
    d = R.diagonal()
    scale = np.linalg.norm(A)
    if not (scale > 0 and np.all(np.abs(d) >= RANK_RTOL * scale)):
        raise RankDeficient("retraction argument is rank deficient")
    return Q * np.where(d < 0, -1.0, 1.0)


class _Manifold:
    kind = ""

    def __init__(self, n: int, r: int):
        n, r = int(n), int(r)
        if not 1 <= r <= n:
            raise ShapeMismatch(f"need 1 <= r <= n, got n={n}, r={r}")
        self.n = n
        self.r = r

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, r={self.r})"

    def __eq__(self, other):
        return type(self) is type(other) and (self.n, self.r) == (other.n, other.r)

    def __hash__(self):
        return hash((self.kind, self.n, self.r))

    def _check(self, *mats):
        for M in mats:
            if np.shape(M) != (self.n, self.r):
                raise ShapeMismatch(f"expected shape {(self.n, self.r)}, got {np.shape(M)}")

    def proj(self, U, W):
        raise NotImplementedError

    def retr(self, U: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """QR retraction ``qf(U + xi)``; a zero ``xi`` returns ``U`` unchanged."""
        self._check(U, xi)
        if not np.any(xi):
            return np.array(U, dtype=float, copy=True)
        return qf(U + xi)

    def inner(self, U, xi, eta) -> float:
        """Euclidean metric ``trace(xi^T eta)`` restricted to the tangent space at ``U``."""
        self._check(U, xi, eta)
        return float(np.vdot(xi, eta))

    def norm(self, U, xi) -> float:
        return float(np.linalg.norm(xi))

    def random_point(self, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        while True:
            try:
                return qf(rng.standard_normal((self.n, self.r)))
            except RankDeficient:  # pragma: no cover - probability zero
                continue

    def orthonormality_error(self, U) -> float:
        return float(np.linalg.norm(U.T @ U - np.eye(self.r)))

    def check_point(self, U, tol=MEMBERSHIP_TOL) -> bool:
        self._check(U)
        return bool(np.all(np.isfinite(U))) and self.orthonormality_error(U) <= tol

    def tangent_error(self, U, xi) -> float:
        raise NotImplementedError

    def check_tangent(self, U, xi, tol=MEMBERSHIP_TOL) -> bool:
        self._check(U, xi)
        return self.tangent_error(U, xi) <= tol


class Stiefel(_Manifold):
    """Orthonormal r-frames in R^n; tangent vectors satisfy ``U^T xi`` skew."""

    kind = "stiefel"

    def proj(self, U, W):
        self._check(U, W)
        UtW = U.T @ W
        return W - U @ ((UtW + UtW.T) / 2)

    def tangent_error(self, U, xi):
        Ut = U.T @ xi
        return float(np.linalg.norm(Ut + Ut.T))

    def same_point(self, U1, U2, tol=MEMBERSHIP_TOL):
        return float(np.linalg.norm(U1 - U2)) <= tol


class Grassmann(_Manifold):
    """r-dimensional subspaces of R^n, horizontal tangent vectors ``U^T xi = 0``."""

    kind = "grassmann"

    def proj(self, U, W):
        self._check(U, W)
        return W - U @ (U.T @ W)

    def tangent_error(self, U, xi):
        return float(np.linalg.norm(U.T @ xi))

    def same_point(self, U1, U2, tol=MEMBERSHIP_TOL):
        return float(np.linalg.norm(U1 @ U1.T - U2 @ U2.T)) <= tol


def make_manifold(kind: str, n: int, r: int) -> _Manifold:
    kinds = {"stiefel": Stiefel, "grassmann": Grassmann}
    try:
        return kinds[kind.lower()](n, r)
    except KeyError:
        raise ValueError(f"unknown manifold {kind!r}") from None

"""Synthetic instances, ratings files, train/test splitting and batch sampling.

Every random operation takes an explicit seed and builds its own
``numpy.random.Generator``; nothing touches global RNG state.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadBatchSize, DensityTooLow, EmptyFile, ParseError, TooFewRatings
from .manifolds import Grassmann, make_manifold, qf
from .problems import IcaProblem, McProblem, PcaProblem

__all__ = [
    "SyntheticKind",
    "SyntheticSpec",
    "Synthetic",
    "pca_spectrum",
    "gen_pca",
    "gen_mc",
    "gen_ica",
    "ica_commuting_optimum",
    "RatingsDataset",
    "SplitDataset",
    "parse_ratings",
    "write_ratings_csv",
    "split_80_20",
    "ratings_to_mc",
    "BatchSampler",
    "batch_sampler",
    "load_matrix_csv",
]


class SyntheticKind(str, enum.Enum):
    PCA = "pca"
    MC = "mc"
    ICA = "ica"


@dataclass(frozen=True)
class SyntheticSpec:
    kind: SyntheticKind
    N: int
    n: int
    r: int
    condition: float = 1.0
    noise_sd: float = 0.0
    density: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", SyntheticKind(self.kind))
        if min(self.N, self.n, self.r) < 1 or self.r > self.n:
            raise ValueError(f"need positive sizes with r <= n, got N={self.N}, n={self.n}, r={self.r}")
        if not self.condition >= 1:
            raise ValueError(f"condition must be >= 1, got {self.condition}")
        if not self.noise_sd >= 0:
            raise ValueError("noise_sd must be nonnegative")
        if not 0 < self.density <= 1:
            raise ValueError(f"density must lie in (0, 1], got {self.density}")


@dataclass
class Synthetic:
    """A generated problem together with what was planted in it."""

    problem: object
    planted: np.ndarray
    holdout: tuple = None
    diagonals: np.ndarray = None


def pca_spectrum(n, r, condition):
    """Singular values: geometric from 1 to ``1/condition`` on the leading r,
    then a tail decaying geometrically from half to a twentieth of the r-th value."""
    if r == 1:
        head = np.ones(1)
    else:
        head = condition ** (-np.arange(r) / (r - 1))
    k = n - r
    if k == 0:
        return head
    s_min = head[-1]
    if k == 1:
        tail = np.array([s_min / 2])
    else:
        tail = (s_min / 2) * 0.1 ** (np.arange(k) / (k - 1))
    return np.concatenate([head, tail])


def gen_pca(spec: SyntheticSpec, manifold="stiefel") -> Synthetic:
    """Data ``Z = sqrt(N) U* diag(s) V^T + noise`` so that ``Z Z^T / N`` has eigenvalues ``s**2``."""
    if spec.kind != SyntheticKind.PCA:
        raise ValueError("spec.kind must be pca")
    rng = np.random.default_rng(spec.seed)
    n, N = spec.n, spec.N
    k = min(n, N)
    basis = qf(rng.standard_normal((n, n)))
    V = qf(rng.standard_normal((N, k)))
    s = pca_spectrum(n, spec.r, spec.condition)[:k]
    Z = math.sqrt(N) * (basis[:, :k] * s) @ V.T
    if spec.noise_sd > 0:
        Z = Z + spec.noise_sd * rng.standard_normal((n, N))
    M = make_manifold(manifold, n, spec.r)
    return Synthetic(PcaProblem(Z, M), basis[:, : spec.r].copy())


def gen_ica(spec: SyntheticSpec) -> Synthetic:
    """Commuting family ``C_i = U* D_i U*^T`` (plus symmetric noise).

    Diagonal entry ``j`` of every ``D_i`` is drawn uniformly from
    ``[0.5, 1.5] * c_j`` where the column scales ``c_j`` decrease linearly
    from 2 to 1, so the leading columns of ``U*`` are the optimal frame.
    """
    if spec.kind != SyntheticKind.ICA:
        raise ValueError("spec.kind must be ica")
    rng = np.random.default_rng(spec.seed)
    n, N = spec.n, spec.N
    basis = qf(rng.standard_normal((n, n)))
    scale = np.linspace(2.0, 1.0, n)
    D = rng.uniform(0.5, 1.5, size=(N, n)) * scale
    C = np.einsum("ik,bk,jk->bij", basis, D, basis)
    if spec.noise_sd > 0:
        E = rng.standard_normal((N, n, n))
        C = C + spec.noise_sd * (E + E.transpose(0, 2, 1)) / 2
    C = (C + C.transpose(0, 2, 1)) / 2
    M = make_manifold("stiefel", n, spec.r)
    return Synthetic(IcaProblem(C, M), basis, diagonals=D)


def ica_commuting_optimum(D, r):
    """Exact optimum of the joint-diagonalisation cost for a noiseless commuting family.

    For each column of the shared eigenbasis the summed squared eigenvalue is
    ``sum_i D_ij**2``; by Jensen's inequality no r-frame beats the r largest.

    Returns:
        ``(optimal_value, column_indices)``.
    """
    D = np.asarray(D, dtype=float)
    score = np.sum(D * D, axis=0)
    idx = np.sort(np.argsort(-score, kind="stable")[:r])
    return -float(np.sum(score[idx])) / D.shape[0], idx


def gen_mc(spec: SyntheticSpec, lam=0.01) -> Synthetic:
    """Planted rank-r matrix ``A B^T``, observed i.i.d. with probability ``density``.

    The observed set is split 80/20 into training entries (the problem) and a
    holdout ``(rows, cols, vals)``.

    Raises:
        DensityTooLow: if some column has no training observation.
    """
    if spec.kind != SyntheticKind.MC:
        raise ValueError("spec.kind must be mc")
    rng = np.random.default_rng(spec.seed)
    n, N, r = spec.n, spec.N, spec.r
    A = rng.standard_normal((n, r))
    B = rng.standard_normal((N, r))
    mask = rng.random((n, N)) < spec.density
    rows, cols = np.nonzero(mask)
    vals = np.einsum("kp,kp->k", A[rows], B[cols])
    if spec.noise_sd > 0:
        vals = vals + spec.noise_sd * rng.standard_normal(vals.size)
    perm = rng.permutation(vals.size)
    k = (vals.size * 4) // 5
    tr = np.sort(perm[:k])
    te = np.sort(perm[k:])
    empty = np.setdiff1d(np.arange(N), cols[tr])
    if empty.size:
        raise DensityTooLow(
            f"{empty.size} of {N} columns have no training observation at density "
            f"{spec.density}; raise density or change the seed"
        )
    problem = McProblem(rows[tr], cols[tr], vals[tr], (n, N), Grassmann(n, r), lam=lam)
    holdout = (rows[te], cols[te], vals[te])
    return Synthetic(problem, qf(A), holdout=holdout)


# --------------------------------------------------------------------------
# ratings files
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RatingsDataset:
    """Ratings with dense 1-based user/item indices.

    ``user_ids[u - 1]`` / ``item_ids[i - 1]`` give the ids found in the file.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: np.ndarray
    item_ids: np.ndarray

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    def __len__(self):
        return len(self.ratings)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return RatingsDataset(
            self.users[idx], self.items[idx], self.ratings[idx], self.user_ids, self.item_ids
        )

    def triplets(self):
        """``(user, item, rating)`` with the file's ids."""
        return list(
            zip(
                self.user_ids[self.users - 1].tolist(),
                self.item_ids[self.items - 1].tolist(),
                self.ratings.tolist(),
            )
        )


@dataclass(frozen=True)
class SplitDataset:
    train: RatingsDataset
    test: RatingsDataset
    seed: int


def _parse_fields(fields, lineno):
    try:
        user = int(fields[0])
        item = int(fields[1])
        rating = float(fields[2])
    except (ValueError, IndexError):
        raise ParseError(f"malformed record {':'.join(fields)!r}", lineno) from None
    if not math.isfinite(rating):
        raise ParseError("non-finite rating", lineno)
    return user, item, rating


def _looks_like_header(fields):
    try:
        float(fields[0])
        return False
    except (ValueError, IndexError):
        return True


def parse_ratings(path, fmt=None) -> RatingsDataset:
    """Read ``user::item::rating[::timestamp]`` or ``user,item,rating`` lines.

    ``fmt`` is ``"doublecolon"`` or ``"csv"``; by default it is inferred from
    the first non-blank line.  A CSV file may start with a header line.
    Ids are re-indexed densely in first-seen order.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if fmt is None:
        first = next((ln for ln in lines if ln.strip()), "")
        fmt = "doublecolon" if "::" in first else "csv"
    fmt = fmt.lower()
    if fmt not in ("doublecolon", "csv"):
        raise ValueError(f"unknown ratings format {fmt!r}")
    records = []
    if fmt == "doublecolon":
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            fields = line.strip().split("::")
            if len(fields) not in (3, 4):
                raise ParseError(f"expected 3 or 4 '::'-separated fields, got {len(fields)}", lineno)
            records.append(_parse_fields(fields, lineno))
    else:
        reader = csv.reader(io.StringIO(text))
        for lineno, fields in enumerate(reader, 1):
            if not fields or not "".join(fields).strip():
                continue
            fields = [f.strip() for f in fields]
            if not records and lineno == 1 and _looks_like_header(fields):
                continue
            if len(fields) < 3:
                raise ParseError(f"expected at least 3 comma-separated fields, got {len(fields)}", lineno)
            records.append(_parse_fields(fields, lineno))
    if not records:
        raise EmptyFile(f"{path}: no ratings found")
    u_map, i_map = {}, {}
    users = np.empty(len(records), dtype=np.int64)
    items = np.empty(len(records), dtype=np.int64)
    ratings = np.empty(len(records))
    for k, (u, i, v) in enumerate(records):
        users[k] = u_map.setdefault(u, len(u_map) + 1)
        items[k] = i_map.setdefault(i, len(i_map) + 1)
        ratings[k] = v
    return RatingsDataset(
        users, items, ratings, np.array(list(u_map), dtype=np.int64), np.array(list(i_map), dtype=np.int64)
    )


def write_ratings_csv(d: RatingsDataset, path):
    """Write ``user,item,rating`` with the file ids and round-trip float formatting."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user,item,rating\n")
        for u, i, v in d.triplets():
            fh.write(f"{u},{i},{v!r}\n")


def split_80_20(d: RatingsDataset, seed) -> SplitDataset:
    """Random split: the first ``floor(0.8 m)`` entries of a seeded permutation train.

    Both halves keep the dense indexing of ``d`` and the original order.
    """
    m = len(d)
    if m < 5:
        raise TooFewRatings(f"need at least 5 ratings to split, got {m}")
    perm = np.random.default_rng(seed).permutation(m)
    k = (m * 4) // 5
    return SplitDataset(d.subset(np.sort(perm[:k])), d.subset(np.sort(perm[k:])), seed)


def ratings_to_mc(split: SplitDataset, r, lam=0.01):
    """Items as rows, users as columns; returns ``(McProblem, holdout)``."""
    tr, te = split.train, split.test
    shape = (tr.n_items, tr.n_users)
    problem = McProblem(tr.items - 1, tr.users - 1, tr.ratings, shape, Grassmann(shape[0], r), lam=lam)
    return problem, (te.items - 1, te.users - 1, te.ratings)


def load_matrix_csv(path):
    """Dense data matrix from CSV, one row per data point; returns ``Z`` with points as columns."""
    text = Path(path).read_text(encoding="utf-8")
    rows = [(k, ln) for k, ln in enumerate(text.splitlines(), 1) if ln.strip()]
    if not rows:
        raise EmptyFile(f"{path}: empty matrix file")
    if _looks_like_header(rows[0][1].split(",")):
        rows = rows[1:]
    data = []
    width = None
    for lineno, ln in rows:
        try:
            vals = [float(x) for x in ln.split(",")]
        except ValueError:
            raise ParseError("non-numeric entry", lineno) from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ParseError(f"expected {width} columns, got {len(vals)}", lineno)
        data.append(vals)
    if not data:
        raise EmptyFile(f"{path}: no data rows")
    return np.array(data).T


# --------------------------------------------------------------------------
# batch sampling
# --------------------------------------------------------------------------


class BatchSampler:
    """Endless stream of index batches drawn uniformly with replacement from ``range(N)``."""

    def __init__(self, N, batch_size, seed):
        if not 1 <= batch_size <= N:
            raise BadBatchSize(f"batch size must lie in [1, {N}], got {batch_size}")
        self.N = int(N)
        self.batch_size = int(batch_size)
        self._rng = np.random.default_rng(seed)

    def __iter__(self):
        return self

    def __next__(self):
        return self._rng.integers(0, self.N, size=self.batch_size)


def batch_sampler(N, batch_size, seed) -> BatchSampler:
    return BatchSampler(N, batch_size, seed)

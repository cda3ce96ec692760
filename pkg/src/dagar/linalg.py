"""Sparse Cholesky, pivoted LDL' for singular precisions, Gaussian sampling.

``sparse_cholesky`` is an up-looking factorisation in natural vertex order
(elimination tree + row patterns); it exists so that order-free and CAR
precisions can be factored without densifying. Small dense problems use
LAPACK through scipy.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .errors import NotPositiveDefiniteError, ValidationError
from .precision import CholeskyPrecision, SparseSymmetric

__all__ = [
    "SparseLowerTriangular",
    "LDLFactor",
    "elimination_tree",
    "sparse_cholesky",
    "permuted_ldl_psd",
    "sample_mvn_precision",
    "dense_inverse",
    "dense_cholesky",
    "make_rng",
    "DENSE_MAX_K",
]

DENSE_MAX_K = 10_000


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; a Generator passes through untouched."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass(frozen=True, eq=False)
class SparseLowerTriangular:
    """Lower-triangular CSR matrix. With ``unit_diagonal`` the diagonal is implicit."""

    matrix: sp.csr_matrix
    unit_diagonal: bool = False

    def __post_init__(self):
        if sp.triu(self.matrix, k=0 if self.unit_diagonal else 1).nnz:
            raise ValidationError("entries above the stored triangle")

    @property
    def k(self) -> int:
        return self.matrix.shape[0]

    def full(self) -> sp.csr_matrix:
        if self.unit_diagonal:
            return (self.matrix + sp.identity(self.k, format="csr")).tocsr()
        return self.matrix

    def to_dense(self) -> np.ndarray:
        return self.full().toarray()

    def diagonal(self) -> np.ndarray:
        return np.ones(self.k) if self.unit_diagonal else self.matrix.diagonal()

    def solve(self, rhs) -> np.ndarray:
        """``L x = rhs``."""
        return spsolve_triangular(self.full(), np.asarray(rhs, float), lower=True,
                                  unit_diagonal=self.unit_diagonal)

    def solve_transpose(self, rhs) -> np.ndarray:
        """``L' x = rhs``."""
        return spsolve_triangular(self.full().T.tocsr(), np.asarray(rhs, float), lower=False,
                                  unit_diagonal=self.unit_diagonal)

    def logdet_product(self) -> float:
        """``log det (L L')`` for a Cholesky factor."""
        return 2.0 * float(np.sum(np.log(self.diagonal())))


@dataclass(frozen=True, eq=False)
class LDLFactor:
    """``P Q P' = (I - B)' F (I - B)`` with ``I - B`` unit lower triangular.

    ``perm[t]`` is the original index placed at position ``t``.
    """

    perm: np.ndarray
    lower: np.ndarray
    diag: np.ndarray
    rank: int

    @property
    def b(self) -> np.ndarray:
        return np.eye(self.lower.shape[0]) - self.lower

    def permutation_matrix(self) -> np.ndarray:
        k = self.perm.size
        p = np.zeros((k, k))
        p[np.arange(k), self.perm] = 1.0
        return p

    def reconstruct(self) -> np.ndarray:
        """``(I - B)' F (I - B)`` in the permuted frame."""
        return self.lower.T @ (self.diag[:, None] * self.lower)


# ---------------------------------------------------------------------------
# sparse Cholesky


def elimination_tree(upper: sp.csr_matrix) -> np.ndarray:
    """Parent of each column in the elimination tree (``-1`` for roots).

    ``upper`` holds the upper triangle; row ``i`` of its transpose lists the
    entries ``A[j, i]`` with ``j <= i``.
    """
    k = upper.shape[0]
    a = upper.T.tocsr()
    parent = np.full(k, -1, dtype=np.int64)
    ancestor = np.full(k, -1, dtype=np.int64)
    for i in range(k):
        for j in a.indices[a.indptr[i]:a.indptr[i + 1]]:
            while j != -1 and j < i:
                nxt = ancestor[j]
                ancestor[j] = i
                if nxt == -1:
                    parent[j] = i
                j = nxt
    return parent


def _row_pattern(cols_k, k, parent, mark) -> list[int]:
    """Columns ``j < k`` where row ``k`` of the factor is nonzero (the row subtree)."""
    mark[k] = k
    out = []
    for j in cols_k:
        while j < k and mark[j] != k:
            out.append(j)
            mark[j] = k
            j = parent[j]
    out.sort()
    return out


def sparse_cholesky(q: SparseSymmetric) -> SparseLowerTriangular:
    """``Q = L L'`` in natural order; raises on a non-positive pivot."""
    k = q.k
    upper = q.upper.tocsr()
    upper.sort_indices()
    parent = elimination_tree(upper)
    a_cols = upper.T.tocsr()  # row k: entries A[j, k], j <= k
    a_cols.sort_indices()

    mark = np.full(k, -1, dtype=np.int64)
    patterns = []
    counts = np.ones(k, dtype=np.int64)
    for r in range(k):
        cols_r = a_cols.indices[a_cols.indptr[r]:a_cols.indptr[r + 1]]
        pat = _row_pattern(cols_r, r, parent, mark)
        patterns.append(pat)
        for j in pat:
            counts[j] += 1
    colptr = np.concatenate([[0], np.cumsum(counts)])
    li = np.zeros(colptr[-1], dtype=np.int64)
    lx = np.zeros(colptr[-1])
    nxt = colptr[:-1].copy()
    x = np.zeros(k)

    for r in range(k):
        lo, hi = a_cols.indptr[r], a_cols.indptr[r + 1]
        x[a_cols.indices[lo:hi]] = a_cols.data[lo:hi]
        d = x[r]
        x[r] = 0.0
        for j in patterns[r]:
            lkj = x[j] / lx[colptr[j]]
            x[j] = 0.0
            p0, p1 = colptr[j] + 1, nxt[j]
            if p1 > p0:
                x[li[p0:p1]] -= lx[p0:p1] * lkj
            d -= lkj * lkj
            li[nxt[j]] = r
            lx[nxt[j]] = lkj
            nxt[j] += 1
        if not d > 0.0:
            raise NotPositiveDefiniteError(
                f"matrix is not positive definite: pivot {r + 1} is {d:.3g}", pivot=r + 1
            )
        li[nxt[r]] = r
        lx[nxt[r]] = np.sqrt(d)
        nxt[r] += 1
    lmat = sp.csc_matrix((lx, li, colptr), shape=(k, k)).tocsr()
    lmat.sort_indices()
    return SparseLowerTriangular(lmat)


def dense_cholesky(q) -> np.ndarray:
    """Lower Cholesky factor via LAPACK, with our error type."""
    q = q.to_dense() if isinstance(q, SparseSymmetric) else np.asarray(q, float)
    try:
        return sla.cholesky(q, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"matrix is not positive definite ({exc})") from None


# ---------------------------------------------------------------------------
# pivoted LDL' of a PSD matrix


def permuted_ldl_psd(q, tol: Optional[float] = None) -> LDLFactor:
    """Factor a possibly singular PSD precision as ``P Q P' = (I-B)' F (I-B)``.

    Diagonal-pivoting Cholesky gives ``P0 Q P0' = R' R`` with ``R`` upper
    trapezoidal of rank ``r``. Pulling out ``diag(R)`` gives a unit factor
    and a non-negative diagonal; reversing the order turns the resulting
    lower-diag-upper product into the upper-diag-lower form required here,
    so the zero entries of ``F`` come first.
    """
    q = q.to_dense() if isinstance(q, SparseSymmetric) else np.array(q, dtype=float)
    k = q.shape[0]
    if q.shape != (k, k) or not np.allclose(q, q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(q).max())):
        raise ValidationError("matrix must be square and symmetric")
    if tol is None:
        tol = 1e-10 * max(float(np.max(np.diag(q))), 0.0) if k else 0.0
    eig_min = float(np.linalg.eigvalsh(q)[0]) if k else 0.0
    if eig_min < -tol:
        raise NotPositiveDefiniteError(f"matrix is not PSD: smallest eigenvalue {eig_min:.3g}")

    a = q.copy()
    perm = np.arange(k)
    r = np.zeros((k, k))
    rank = 0
    for t in range(k):
        diag = np.diag(a)[t:]
        dmax = float(diag.max())
        if dmax <= tol:
            break
        # ties go to the highest original index so that, after the final
        # reversal, an already-diagonal matrix keeps its natural order
        tied = np.flatnonzero(diag >= dmax * (1.0 - 1e-12))
        p = t + int(tied[np.argmax(perm[t + tied])])
        if p != t:
            a[[t, p], :] = a[[p, t], :]
            a[:, [t, p]] = a[:, [p, t]]
            r[:t, [t, p]] = r[:t, [p, t]]
            perm[[t, p]] = perm[[p, t]]
        piv = np.sqrt(a[t, t])
        r[t, t] = piv
        r[t, t + 1:] = a[t, t + 1:] / piv
        a[t + 1:, t + 1:] -= np.outer(r[t, t + 1:], r[t, t + 1:])
        rank += 1
    # P0 Q P0' = R'R with R = D U for rows < rank; rows >= rank of R are zero
    d = np.zeros(k)
    u = np.eye(k)
    d[:rank] = np.diag(r)[:rank]
    u[:rank, :] = r[:rank, :] / d[:rank, None]
    # R'R = U' D^2 U; reversing both axes yields L' F L with L unit lower
    rev = np.arange(k)[::-1]
    lower = u[np.ix_(rev, rev)]
    f = (d ** 2)[rev]
    return LDLFactor(perm=perm[rev].copy(), lower=lower, diag=f, rank=rank)


# ---------------------------------------------------------------------------
# sampling and dense oracles


def sample_mvn_precision(factor: Union[SparseLowerTriangular, CholeskyPrecision, np.ndarray],
                         scale_precision: float = 1.0, rng_seed=None, size: Optional[int] = None
                         ) -> np.ndarray:
    """Draw ``w ~ N(0, (scale * Q)^{-1})`` from a factor of ``Q``.

    Accepts a Cholesky factor ``L`` (``Q = L L'``, solve ``L' w = z``), a
    dense lower Cholesky factor, or DAGAR factors (solve ``(I-B) w = F^{-1/2} z``
    in ordering order). ``size`` adds a leading sample axis.
    """
    if not scale_precision > 0:
        raise ValidationError(f"scale_precision must be positive, got {scale_precision}")
    rng = make_rng(rng_seed)
    if isinstance(factor, CholeskyPrecision):
        k = factor.k
    else:
        k = factor.shape[0] if isinstance(factor, np.ndarray) else factor.k
    n = 1 if size is None else int(size)
    z = rng.standard_normal((k, n)) / np.sqrt(scale_precision)

    if isinstance(factor, CholeskyPrecision):
        if not np.all(factor.tau > 0):
            raise NotPositiveDefiniteError("DAGAR factor has a non-positive conditional precision")
        pi = factor.ordering.pi
        lperm = factor.lower_factor()[pi][:, pi].tocsr()
        rhs = z[pi] / np.sqrt(factor.tau[pi])[:, None]
        wp = spsolve_triangular(lperm, rhs, lower=True, unit_diagonal=True)
        w = np.empty_like(wp)
        w[pi] = wp
    elif isinstance(factor, SparseLowerTriangular):
        if np.any(factor.diagonal() <= 0):
            raise NotPositiveDefiniteError("Cholesky factor is singular")
        w = spsolve_triangular(factor.full().T.tocsr(), z, lower=False)
    else:
        if np.any(np.diag(factor) <= 0):
            raise NotPositiveDefiniteError("Cholesky factor is singular")
        w = sla.solve_triangular(factor, z, lower=True, trans="T", check_finite=False)
    w = np.asarray(w).reshape(k, n).T
    return w[0] if size is None else w


def dense_inverse(q) -> np.ndarray:
    """Inverse of a PD matrix through its Cholesky factor."""
    q = q.to_dense() if isinstance(q, SparseSymmetric) else np.asarray(q, float)
    k = q.shape[0]
    if k > DENSE_MAX_K:
        raise ValidationError(f"dense inverse refused for k={k} > {DENSE_MAX_K}")
    try:
        c = sla.cho_factor(q, lower=True, check_finite=False)
    except sla.LinAlgError:
        raise NotPositiveDefiniteError("matrix is not positive definite") from None
    inv = sla.cho_solve(c, np.eye(k), check_finite=False)
    return (inv + inv.T) / 2.0

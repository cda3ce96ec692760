"""DAGAR, order-free DAGAR and CAR precision matrices.

The ordered DAGAR model is kept in factored form ``Q = (I-B)' F (I-B)``
where row ``i`` of ``B`` puts the weight ``b_i`` on every directed
neighbour of ``i`` and ``F = diag(tau)``. Only the factored form is needed
for densities; ``assemble_precision`` materialises ``Q`` when required.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, ParseError, StructureError, ValidationError
from .graph import Graph, Ordering, connected_components, second_order_graph

__all__ = [
    "CholeskyPrecision",
    "SparseSymmetric",
    "dagar_coefficients",
    "dagar_factors",
    "assemble_precision",
    "dagar_logdet",
    "quadratic_form",
    "f_weight",
    "f_weights",
    "s_weight",
    "OrderFreeBasis",
    "orderfree_precision",
    "bruteforce_orderfree",
    "car_precision",
    "write_triplet",
    "read_triplet",
    "BRUTEFORCE_MAX_K",
]

BRUTEFORCE_MAX_K = 8


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not (0.0 <= rho < 1.0):
        raise ParameterError(f"rho must lie in [0, 1), got {rho!r}")
    return rho


def _check_connected(g: Graph, allow_disconnected: bool) -> None:
    if allow_disconnected:
        return
    n, _ = connected_components(g)
    if n > 1:
        raise StructureError(
            f"graph has {n} connected components; pass allow_disconnected=True "
            "for a block-diagonal model"
        )


@dataclass(frozen=True, eq=False)
class SparseSymmetric:
    """Symmetric sparse matrix stored as its upper triangle (diagonal included).

    ``upper`` is a CSR matrix with sorted column indices. Every diagonal
    entry is stored, even when zero.
    """

    upper: sp.csr_matrix
    singular: bool = False
    label: str = field(default="", compare=False)

    def __post_init__(self):
        u = self.upper
        if u.shape[0] != u.shape[1]:
            raise ValidationError("precision matrix must be square")
        if sp.tril(u, k=-1).nnz:
            raise ValidationError("only the upper triangle may be stored")
        if not np.all(np.isfinite(u.data)):
            raise ValidationError("precision matrix has non-finite entries")

    @classmethod
    def from_matrix(cls, m, singular: bool = False, label: str = "") -> "SparseSymmetric":
        """Keep the upper triangle of a (dense or sparse) symmetric matrix."""
        csr = sp.csr_matrix(m)
        if csr.shape[0] != csr.shape[1]:
            raise ValidationError(f"matrix must be square, got {csr.shape}")
        asym = abs(csr - csr.T)
        scale = abs(csr).max() if csr.nnz else 0.0
        if asym.nnz and asym.max() > 1e-12 * max(scale, 1.0):
            raise ValidationError("matrix is not symmetric")
        coo = csr.tocoo()
        keep = coo.row <= coo.col
        k = coo.shape[0]
        return cls.from_entries(k, coo.row[keep], coo.col[keep], coo.data[keep],
                                singular=singular, label=label)

    @classmethod
    def from_entries(cls, k, rows, cols, values, singular=False, label="") -> "SparseSymmetric":
        """Build from upper-triangle entries; duplicates are summed, diagonal padded."""
        rows = np.concatenate([np.asarray(rows, np.int64), np.arange(k)])
        cols = np.concatenate([np.asarray(cols, np.int64), np.arange(k)])
        values = np.concatenate([np.asarray(values, float), np.zeros(k)])
        u = sp.csr_matrix((values, (rows, cols)), shape=(k, k))
        u.sum_duplicates()
        u.sort_indices()
        return cls(u, singular=singular, label=label)

    @property
    def k(self) -> int:
        return self.upper.shape[0]

    @property
    def nnz(self) -> int:
        """Stored entries of the upper triangle including the diagonal."""
        return self.upper.nnz

    def diagonal(self) -> np.ndarray:
        return self.upper.diagonal()

    def to_scipy(self) -> sp.csr_matrix:
        u = self.upper
        full = (u + sp.triu(u, k=1).T).tocsr()
        full.sort_indices()
        return full

    def to_dense(self) -> np.ndarray:
        u = self.upper.toarray()
        return u + np.triu(u, 1).T

    def __getitem__(self, ij) -> float:
        i, j = ij
        if i > j:
            i, j = j, i
        return float(self.upper[i, j])

    def __matmul__(self, w):
        return self.to_scipy() @ w

    def pattern(self) -> set[tuple[int, int]]:
        coo = self.upper.tocoo()
        return set(zip(coo.row.tolist(), coo.col.tolist()))


# ---------------------------------------------------------------------------
# ordered DAGAR


@dataclass(frozen=True, eq=False)
class CholeskyPrecision:
    """Factored DAGAR precision for one ordering and one ``rho``."""

    ordering: Ordering
    rho: float
    b: np.ndarray
    tau: np.ndarray

    @property
    def k(self) -> int:
        return self.tau.size

    @property
    def directed_counts(self) -> np.ndarray:
        return self.ordering.directed_counts

    def lower_factor(self) -> sp.csr_matrix:
        """``I - B`` in the original vertex labelling (lower triangular only after permuting by ``pi``)."""
        m = self.ordering.directed_matrix
        return (sp.identity(self.k, format="csr") - sp.diags(self.b) @ m).tocsr()

    def with_rho(self, rho: float) -> "CholeskyPrecision":
        b, tau = dagar_coefficients(self.ordering.directed_counts, _check_rho(rho))
        return CholeskyPrecision(self.ordering, float(rho), b, tau)


def dagar_coefficients(counts: np.ndarray, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex neighbour weight and conditional precision.

    For ``n`` directed neighbours: ``b = rho / (1 + (n-1) rho^2)`` and
    ``tau = (1 + (n-1) rho^2) / (1 - rho^2)``. Vertices with no directed
    neighbour get ``b = 0``.
    """
    r2 = rho * rho
    denom = 1.0 + (counts - 1.0) * r2
    tau = denom / (1.0 - r2)
    b = np.where(counts > 0, rho / denom, 0.0)
    return b, tau


def dagar_factors(g: Graph, ordering: Ordering, rho: float, *,
                  allow_disconnected: bool = False) -> CholeskyPrecision:
    rho = _check_rho(rho)
    if ordering.k != g.k:
        raise ValidationError(f"ordering has {ordering.k} vertices, graph has {g.k}")
    _check_connected(g, allow_disconnected)
    b, tau = dagar_coefficients(ordering.directed_counts, rho)
    b.setflags(write=False)
    tau.setflags(write=False)
    return CholeskyPrecision(ordering, rho, b, tau)


def assemble_precision(cp: CholeskyPrecision) -> SparseSymmetric:
    """Explicit ``Q = (I-B)' F (I-B)`` in the original vertex labelling."""
    lf = cp.lower_factor()
    q = (lf.T @ sp.diags(cp.tau) @ lf).tocsr()
    return SparseSymmetric.from_matrix(q, label="dagar")


def dagar_logdet(cp: CholeskyPrecision) -> float:
    """``log det Q``, which is just ``sum(log tau)`` for a unit-triangular factor."""
    return float(np.sum(np.log(cp.tau)))


def quadratic_form(cp: CholeskyPrecision, w) -> float:
    """``w' Q w = sum_i tau_i (w_i - b_i * sum of w over directed neighbours)^2``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (cp.k,):
        raise ValidationError(f"vector has shape {w.shape}, expected ({cp.k},)")
    r = w - cp.b * (cp.ordering.directed_matrix @ w)
    return float(np.dot(cp.tau, r * r))


# ---------------------------------------------------------------------------
# order-free DAGAR


@lru_cache(maxsize=256)
def _f_table(rho: float, nmax: int) -> np.ndarray:
    r = np.arange(1, nmax + 1, dtype=float)
    table = np.cumsum(r / (1.0 + (r - 1.0) * rho * rho))
    table.setflags(write=False)
    return table


def f_weights(rho: float, nmax: int) -> np.ndarray:
    """``f(rho, n)`` for ``n = 1..nmax`` (index ``n-1``), computed in O(nmax)."""
    rho = _check_rho(rho)
    if nmax < 1:
        return np.zeros(0)
    return _f_table(rho, int(nmax))


def f_weight(rho: float, n: int) -> float:
    """``sum_{r=1}^{n} r / (1 + (r-1) rho^2)``."""
    if n < 1:
        raise ParameterError(f"f_weight needs n >= 1, got {n}")
    return float(f_weights(rho, n)[n - 1])


def s_weight(rho: float) -> float:
    """``f(rho, 4)``; the grid limit uses it. ``rho = 1`` is allowed here."""
    if not (0.0 <= rho <= 1.0):
        raise ParameterError(f"rho must lie in [0, 1], got {rho!r}")
    return float(sum(r / (1.0 + (r - 1.0) * rho * rho) for r in range(1, 5)))


class OrderFreeBasis:
    """Fixed sparsity pattern of the order-free precision plus per-entry counts.

    Every stored value is a linear combination of a few graph counts with
    ``rho``-dependent coefficients, so re-evaluating at a new ``rho`` is a
    single matrix-vector product. The pattern is the diagonal plus the
    second-order graph.
    """

    def __init__(self, g: Graph):
        self.graph = g
        self.k = g.k
        deg = g.degrees
        self.nmax = int(deg.max()) if g.k else 0
        second = second_order_graph(g)
        upper = [(i, j) for i, j in second.edges.tolist()]
        rows = np.array([i for i, _ in upper] + list(range(g.k)), dtype=np.int64)
        cols = np.array([j for _, j in upper] + list(range(g.k)), dtype=np.int64)
        order = np.lexsort((cols, rows))
        self.rows, self.cols = rows[order], cols[order]
        index = {(int(i), int(j)): t for t, (i, j) in enumerate(zip(self.rows, self.cols))}
        nnz = self.rows.size
        self.e2 = len(upper)

        # columns: [const, n_i, edge, diag deg-d terms for d=1..nmax, common-neighbour deg-d for d=1..nmax]
        nd = self.nmax
        counts = np.zeros((nnz, 3 + 2 * nd))
        for i in range(g.k):
            t = index[(i, i)]
            counts[t, 0] = 1.0
            counts[t, 1] = deg[i]
            for j in g.adjacency[i]:
                counts[t, 3 + deg[j] - 1] += 1.0
        for i, j in g.edges.tolist():
            counts[index[(i, j)], 2] = 1.0
        for m in range(g.k):
            nb = g.adjacency[m]
            for a, b in itertools.combinations(nb, 2):
                counts[index[(a, b)], 3 + nd + deg[m] - 1] += 1.0
        self.counts = counts
        self.has_common = counts[:, 3 + nd:].any(axis=0)
        if nd >= 1:
            # a common neighbour necessarily has degree >= 2
            assert not self.has_common[0]

    def coefficients(self, rho: float) -> np.ndarray:
        rho = _check_rho(rho)
        nd = self.nmax
        r2 = rho * rho
        s = 1.0 / (1.0 - r2)
        coef = np.zeros(3 + 2 * nd)
        coef[0] = 1.0
        coef[1] = r2 * s / 2.0
        coef[2] = -rho * s
        if nd:
            f = f_weights(rho, nd)
            n = np.arange(1, nd + 1, dtype=float)
            coef[3:3 + nd] = r2 * s * f / (n * (n + 1.0))
            g = np.zeros(nd)
            n2 = n[1:]
            g[1:] = s * (1.0 / (2.0 * (n2 - 1.0)) - f[1:] / ((n2 - 1.0) * n2 * (n2 + 1.0)))
            coef[3 + nd:] = g
        return coef

    def values(self, rho: float) -> np.ndarray:
        return self.counts @ self.coefficients(rho)

    def precision(self, rho: float) -> SparseSymmetric:
        u = sp.csr_matrix((self.values(rho), (self.rows, self.cols)), shape=(self.k, self.k))
        u.sort_indices()
        return SparseSymmetric(u, label="dagar-of")

    def dense(self, rho: float) -> np.ndarray:
        q = np.zeros((self.k, self.k))
        v = self.values(rho)
        q[self.rows, self.cols] = v
        q[self.cols, self.rows] = v
        return q


def orderfree_precision(g: Graph, rho: float, *, allow_disconnected: bool = False) -> SparseSymmetric:
    """Closed-form average of the DAGAR precision over all vertex orderings.

    Diagonal: ``1 + n_i rho^2 / (2(1-rho^2)) + rho^2/(1-rho^2) *
    sum_{j~i} f(rho,n_j) / (n_j (n_j+1))``. Off-diagonal: ``-rho/(1-rho^2)``
    for neighbours plus, for each common neighbour ``m``,
    ``(1/(2(n_m-1)) - f(rho,n_m) / ((n_m-1) n_m (n_m+1))) / (1-rho^2)``.
    """
    _check_rho(rho)
    _check_connected(g, allow_disconnected)
    return OrderFreeBasis(g).precision(rho)


def bruteforce_orderfree(g: Graph, rho: float) -> np.ndarray:
    """Average the DAGAR precision over every one of the ``k!`` orderings.

    Exhaustive enumeration, so ``k`` is capped at ``BRUTEFORCE_MAX_K``.
    Each ordering's matrix is built directly from its directed edges, with
    no use of the closed form.
    """
    rho = _check_rho(rho)
    if g.k > BRUTEFORCE_MAX_K:
        raise ValidationError(
            f"brute-force averaging enumerates k! orderings; k={g.k} exceeds {BRUTEFORCE_MAX_K}"
        )
    k, edges = g.k, g.edges
    perms = np.array(list(itertools.permutations(range(k))), dtype=np.int64).reshape(-1, k)
    assert perms.shape[0] == math.factorial(k)
    pos = np.empty_like(perms)
    np.put_along_axis(pos, perms, np.arange(k)[None, :], axis=1)
    total = np.zeros((k, k))
    # batches bound memory at k = 8 (40320 orderings)
    for start in range(0, perms.shape[0], 5040):
        ps = pos[start:start + 5040]
        n = ps.shape[0]
        lf = np.broadcast_to(np.eye(k), (n, k, k)).copy()
        if edges.shape[0]:
            u, v = edges[:, 0], edges[:, 1]
            u_later = ps[:, u] > ps[:, v]
            later = np.where(u_later, u, v)
            earlier = np.where(u_later, v, u)
            counts = np.zeros((n, k), dtype=np.int64)
            rows = np.repeat(np.arange(n), edges.shape[0])
            np.add.at(counts, (rows, later.ravel()), 1)
            b, tau = dagar_coefficients(counts, rho)
            lf[rows, later.ravel(), earlier.ravel()] = -b[rows, later.ravel()]
        else:
            b, tau = dagar_coefficients(np.zeros((n, k), dtype=np.int64), rho)
        total += np.einsum("nij,ni,nil->jl", lf, tau, lf)
    return total / perms.shape[0]


# ---------------------------------------------------------------------------
# CAR


def car_precision(g: Graph, rho: Optional[float] = None, variant: str = "proper", *,
                  allow_disconnected: bool = False) -> SparseSymmetric:
    """``D - rho A``; the improper variant fixes ``rho = 1`` and is singular."""
    _check_connected(g, allow_disconnected)
    if variant == "proper":
        if rho is None:
            raise ParameterError("proper CAR needs rho")
        rho = float(rho)
        if not (0.0 <= rho < 1.0):
            raise ParameterError(f"proper CAR requires 0 <= rho < 1, got {rho!r}")
        if np.any(g.degrees == 0):
            raise StructureError("proper CAR is singular with isolated vertices")
        singular = False
    elif variant == "improper":
        if rho is not None and float(rho) != 1.0:
            raise ParameterError(f"improper CAR fixes rho = 1, got {rho!r}")
        rho = 1.0
        singular = True
    else:
        raise ValidationError(f"CAR variant must be 'proper' or 'improper', got {variant!r}")
    q = sp.diags(g.degrees.astype(float)) - rho * g.adjacency_matrix
    return SparseSymmetric.from_matrix(q, singular=singular, label=f"car-{variant}")


# ---------------------------------------------------------------------------
# triplet files


def write_triplet(q: SparseSymmetric, path) -> None:
    """Header ``k nnz``, then ``i j value`` for the upper triangle (1-based)."""
    coo = q.upper.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"{q.k} {coo.nnz}\n")
        for t in order:
            fh.write(f"{coo.row[t] + 1} {coo.col[t] + 1} {coo.data[t]:.17g}\n")


def read_triplet(path) -> SparseSymmetric:
    with open(path) as fh:
        lines = [(n, s.split()) for n, s in enumerate(fh, 1) if s.strip() and not s.startswith("#")]
    if not lines:
        raise ParseError("empty triplet file", path)
    try:
        k, nnz = int(lines[0][1][0]), int(lines[0][1][1])
    except (ValueError, IndexError):
        raise ParseError("header must be 'k nnz'", path, lines[0][0]) from None
    if len(lines) - 1 != nnz:
        raise ParseError(f"header declares {nnz} entries, file has {len(lines) - 1}", path, lines[0][0])
    rows, cols, vals = [], [], []
    for n, toks in lines[1:]:
        try:
            i, j, v = int(toks[0]) - 1, int(toks[1]) - 1, float(toks[2])
        except (ValueError, IndexError):
            raise ParseError("expected 'i j value'", path, n) from None
        if not (0 <= i <= j < k):
            raise ParseError(f"entry ({i + 1}, {j + 1}) is not in the upper triangle of a {k}x{k} matrix",
                             path, n)
        rows.append(i)
        cols.append(j)
        vals.append(v)
    return SparseSymmetric.from_entries(k, rows, cols, vals)

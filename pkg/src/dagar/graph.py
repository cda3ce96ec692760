"""Undirected neighbourhood graphs, vertex orderings and directed neighbour sets.

Vertices are 0-based inside the library. Files and user-facing messages use
1-based indices; the conversion happens in the parsers.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import ParseError, StructureError, ValidationError

__all__ = [
    "Graph",
    "Ordering",
    "path_graph",
    "grid_graph",
    "star_graph",
    "complete_graph",
    "from_edge_list",
    "read_edge_list",
    "read_embedding",
    "write_edge_list",
    "load_us48",
    "second_order_graph",
    "make_ordering",
    "coordinate_sum_ordering",
    "tree_traversal_ordering",
    "shortest_path_distances",
    "is_connected",
    "connected_components",
    "random_tree",
    "random_connected_graph",
    "parse_graph_spec",
]


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph on vertices ``0..k-1``.

    ``coords`` is an optional planar embedding (one ``(x, y)`` row per
    vertex); ``labels`` optional display names.
    """

    k: int
    adjacency: tuple[tuple[int, ...], ...]
    coords: Optional[np.ndarray] = field(default=None, repr=False)
    labels: Optional[tuple[str, ...]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"graph needs at least one vertex, got k={self.k}")
        if len(self.adjacency) != self.k:
            raise ValidationError("adjacency must list neighbours for every vertex")
        for i, nbrs in enumerate(self.adjacency):
            if list(nbrs) != sorted(set(nbrs)):
                raise ValidationError(f"neighbours of vertex {i + 1} are not sorted/unique")
            for j in nbrs:
                if j == i:
                    raise ValidationError(f"self-loop at vertex {i + 1}")
                if i not in self.adjacency[j]:
                    raise ValidationError(f"edge {i + 1}-{j + 1} is not symmetric")
        if self.coords is not None:
            coords = np.asarray(self.coords, dtype=float)
            if coords.shape != (self.k, 2):
                raise ValidationError(f"embedding must have shape ({self.k}, 2), got {coords.shape}")
            if not np.all(np.isfinite(coords)):
                raise ValidationError("embedding has non-finite coordinates")
            coords.setflags(write=False)
            object.__setattr__(self, "coords", coords)

    @cached_property
    def degrees(self) -> np.ndarray:
        d = np.array([len(a) for a in self.adjacency], dtype=np.int64)
        d.setflags(write=False)
        return d

    @property
    def e(self) -> int:
        return int(self.degrees.sum()) // 2

    @cached_property
    def edges(self) -> np.ndarray:
        """``(e, 2)`` array of undirected edges with ``i < j``, lexicographic."""
        out = [(i, j) for i, nbrs in enumerate(self.adjacency) for j in nbrs if i < j]
        arr = np.array(out, dtype=np.int64).reshape(-1, 2)
        arr.setflags(write=False)
        return arr

    @cached_property
    def adjacency_matrix(self) -> sp.csr_matrix:
        e = self.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(self.k, self.k))
        a.sort_indices()
        return a

    def has_edge(self, i: int, j: int) -> bool:
        return j in self.adjacency[i]

    def with_coords(self, coords) -> "Graph":
        return Graph(self.k, self.adjacency, coords=np.asarray(coords, float), labels=self.labels)

    def subgraph(self, vertices: Sequence[int]) -> "Graph":
        """Induced subgraph, vertices relabelled ``0..len(vertices)-1`` in the given order."""
        vertices = list(vertices)
        pos = {v: t for t, v in enumerate(vertices)}
        adjacency = tuple(
            tuple(sorted(pos[j] for j in self.adjacency[v] if j in pos)) for v in vertices
        )
        coords = None if self.coords is None else self.coords[vertices]
        labels = None if self.labels is None else tuple(self.labels[v] for v in vertices)
        return Graph(len(vertices), adjacency, coords=coords, labels=labels)

    def relabel(self, perm: Sequence[int]) -> "Graph":
        """Graph with vertex ``v`` renamed to ``perm[v]``."""
        perm = np.asarray(perm)
        edges = [(int(perm[i]), int(perm[j])) for i, j in self.edges]
        return _from_pairs(self.k, edges)


def _from_pairs(k: int, pairs: Iterable[tuple[int, int]], coords=None, labels=None) -> Graph:
    nbrs: list[set[int]] = [set() for _ in range(k)]
    for i, j in pairs:
        nbrs[i].add(j)
        nbrs[j].add(i)
    return Graph(k, tuple(tuple(sorted(s)) for s in nbrs), coords=coords, labels=labels)


@dataclass(frozen=True, eq=False)
class Ordering:
    """A vertex permutation and the directed neighbour sets it induces.

    ``pi[t]`` is the vertex at position ``t``; ``pi_inverse[v]`` is the
    position of vertex ``v``. ``directed_neighbors[v]`` holds the neighbours
    of ``v`` that come before it.
    """

    pi: np.ndarray
    pi_inverse: np.ndarray
    directed_neighbors: tuple[np.ndarray, ...]
    directed_counts: np.ndarray

    @property
    def k(self) -> int:
        return self.pi.size

    @cached_property
    def directed_matrix(self) -> sp.csr_matrix:
        """0/1 matrix with ``M[i, j] = 1`` iff ``j`` is a directed neighbour of ``i``."""
        rows = np.repeat(np.arange(self.k), self.directed_counts)
        cols = (
            np.concatenate(self.directed_neighbors)
            if self.k
            else np.zeros(0, dtype=np.int64)
        )
        m = sp.csr_matrix((np.ones(rows.size), (rows, cols.astype(np.int64))), shape=(self.k, self.k))
        m.sort_indices()
        return m

    def directed_edges(self) -> np.ndarray:
        """``(e, 2)`` array of ``(parent, child)`` pairs."""
        return np.array(
            [(int(j), i) for i, nb in enumerate(self.directed_neighbors) for j in nb],
            dtype=np.int64,
        ).reshape(-1, 2)


def make_ordering(g: Graph, pi: Sequence[int]) -> Ordering:
    pi = np.asarray(pi, dtype=np.int64)
    if pi.shape != (g.k,) or not np.array_equal(np.sort(pi), np.arange(g.k)):
        raise ValidationError("ordering must be a permutation of all vertices")
    inv = np.empty_like(pi)
    inv[pi] = np.arange(g.k)
    directed = []
    for i in range(g.k):
        nb = np.array([j for j in g.adjacency[i] if inv[j] < inv[i]], dtype=np.int64)
        nb.setflags(write=False)
        directed.append(nb)
    counts = np.array([d.size for d in directed], dtype=np.int64)
    for arr in (pi, inv, counts):
        arr.setflags(write=False)
    return Ordering(pi, inv, tuple(directed), counts)


# ---------------------------------------------------------------------------
# constructors


def path_graph(k: int) -> Graph:
    if k < 1:
        raise ValidationError(f"path graph needs k >= 1, got {k}")
    coords = np.column_stack([np.arange(1, k + 1, dtype=float), np.zeros(k)])
    return _from_pairs(k, [(i, i + 1) for i in range(k - 1)], coords=coords)


def grid_graph(m: int, n: int) -> Graph:
    """``m x n`` lattice, rook adjacency; cell ``(i, j)`` is vertex ``i*n + j``."""
    if m < 1 or n < 1:
        raise ValidationError(f"grid dimensions must be positive, got {m}x{n}")
    pairs = []
    for i in range(m):
        for j in range(n):
            v = i * n + j
            if j + 1 < n:
                pairs.append((v, v + 1))
            if i + 1 < m:
                pairs.append((v, v + n))
    ii, jj = np.divmod(np.arange(m * n), n)
    coords = np.column_stack([ii + 1.0, jj + 1.0])
    return _from_pairs(m * n, pairs, coords=coords)


def star_graph(leaves: int) -> Graph:
    """Hub is vertex 0."""
    return _from_pairs(leaves + 1, [(0, t) for t in range(1, leaves + 1)])


def complete_graph(k: int) -> Graph:
    return _from_pairs(k, [(i, j) for i in range(k) for j in range(i + 1, k)])


def from_edge_list(k: int, edges: Iterable[Sequence[int]], *, base: int = 1,
                   lines: Optional[Sequence[int]] = None, path=None) -> Graph:
    """Build a graph from vertex pairs (1-based by default).

    Duplicate and reversed pairs collapse to one edge. ``lines`` gives the
    source line of each pair so errors can point at it.
    """
    if k < 1:
        raise ValidationError(f"graph needs at least one vertex, got k={k}")
    pairs = []
    for t, (a, b) in enumerate(edges):
        where = lines[t] if lines is not None else None
        i, j = int(a) - base, int(b) - base
        if not (0 <= i < k and 0 <= j < k):
            raise ParseError(f"vertex index out of range 1..{k} in pair ({a}, {b})", path, where)
        if i == j:
            raise ParseError(f"self-loop at vertex {a}", path, where)
        pairs.append((i, j))
    return _from_pairs(k, pairs)


def _data_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            yield lineno, s.split()


def read_edge_list(path, coords_path=None) -> Graph:
    """Read ``k e`` then ``e`` lines of ``i j`` (1-based, ``#`` comments)."""
    rows = list(_data_lines(path))
    if not rows:
        raise ParseError("empty edge-list file", path)
    lineno, header = rows[0]
    try:
        k, e = int(header[0]), int(header[1])
    except (ValueError, IndexError):
        raise ParseError("header must be 'k e'", path, lineno) from None
    body = rows[1:]
    if len(body) != e:
        raise ParseError(f"header declares {e} edges but file has {len(body)}", path, lineno)
    pairs, lines = [], []
    for ln, toks in body:
        if len(toks) != 2:
            raise ParseError("expected 'i j'", path, ln)
        try:
            pairs.append((int(toks[0]), int(toks[1])))
        except ValueError:
            raise ParseError(f"non-integer vertex in {' '.join(toks)!r}", path, ln) from None
        lines.append(ln)
    g = from_edge_list(k, pairs, lines=lines, path=path)
    if coords_path is not None:
        g = g.with_coords(read_embedding(coords_path, k))
    return g


def read_embedding(path, k: int) -> np.ndarray:
    """Read ``i x y`` lines (1-based) into a ``(k, 2)`` array."""
    coords = np.full((k, 2), np.nan)
    for ln, toks in _data_lines(path):
        if len(toks) != 3:
            raise ParseError("expected 'i x y'", path, ln)
        try:
            i = int(toks[0]) - 1
            xy = float(toks[1]), float(toks[2])
        except ValueError:
            raise ParseError("malformed embedding line", path, ln) from None
        if not 0 <= i < k:
            raise ParseError(f"vertex index {i + 1} out of range 1..{k}", path, ln)
        coords[i] = xy
    missing = np.flatnonzero(np.isnan(coords[:, 0]))
    if missing.size:
        raise ParseError(f"no coordinates for vertex {missing[0] + 1}", path)
    return coords


def write_edge_list(g: Graph, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{g.k} {g.e}\n")
        for i, j in g.edges:
            fh.write(f"{i + 1} {j + 1}\n")


def load_us48() -> Graph:
    """Contiguous US states (48 vertices) with approximate centroid embedding."""
    data = resources.files("dagar") / "data"
    with resources.as_file(data / "us48_edges.txt") as edges, \
            resources.as_file(data / "us48_coords.txt") as coords, \
            resources.as_file(data / "us48_codes.txt") as codes:
        g = read_edge_list(edges, coords)
        labels = [None] * g.k
        for _, (i, code) in _data_lines(codes):
            labels[int(i) - 1] = code
    return Graph(g.k, g.adjacency, coords=g.coords, labels=tuple(labels))


def parse_graph_spec(text: str) -> Graph:
    """``path:K``, ``grid:MxN``, ``us48`` or a path to an edge-list file.

    An edge-list path may be followed by ``,coords.txt`` to attach an embedding.
    """
    if text == "us48":
        return load_us48()
    try:
        if text.startswith("path:"):
            return path_graph(int(text[5:]))
        if text.startswith("grid:"):
            m, _, n = text[5:].partition("x")
            return grid_graph(int(m), int(n or m))
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad graph size in {text!r}") from None
    edge_path, _, coord_path = text.partition(",")
    if not Path(edge_path).exists():
        raise ValidationError(f"unknown graph source {text!r}")
    return read_edge_list(edge_path, coord_path or None)


# ---------------------------------------------------------------------------
# derived structure


def second_order_graph(g: Graph) -> Graph:
    """Join vertices that are neighbours or share at least one neighbour."""
    a = g.adjacency_matrix
    pattern = (a + a @ a).tocoo()
    pairs = [(int(i), int(j)) for i, j in zip(pattern.row, pattern.col) if i < j]
    return _from_pairs(g.k, pairs)


def coordinate_sum_ordering(g: Graph, direction: str = "sum", decreasing: bool = False,
                            coords=None) -> Ordering:
    """Order vertices by ``x + y`` (``direction="sum"``) or ``x - y``.

    Ties go to the lower vertex index in either direction.
    """
    coords = g.coords if coords is None else np.asarray(coords, float)
    if coords is None:
        raise ValidationError("coordinate ordering needs an embedding")
    if direction == "sum":
        key = coords[:, 0] + coords[:, 1]
    elif direction == "difference":
        key = coords[:, 0] - coords[:, 1]
    else:
        raise ValidationError(f"direction must be 'sum' or 'difference', got {direction!r}")
    if decreasing:
        key = -key
    pi = np.lexsort((np.arange(g.k), key))
    return make_ordering(g, pi)


def tree_traversal_ordering(g: Graph, root: int = 0) -> Ordering:
    """Breadth-first order from ``root``; every other vertex gets its parent as sole directed neighbour."""
    if g.e != g.k - 1 or not is_connected(g):
        raise StructureError(f"graph is not a tree (k={g.k}, e={g.e})")
    seen = np.zeros(g.k, dtype=bool)
    seen[root] = True
    order = []
    queue = deque([root])
    while queue:
        v = queue.popleft()
        order.append(v)
        for u in g.adjacency[v]:
            if not seen[u]:
                seen[u] = True
                queue.append(u)
    return make_ordering(g, order)


def shortest_path_distances(g: Graph) -> np.ndarray:
    """All-pairs hop distances by BFS; raises on disconnected graphs."""
    d = csgraph.shortest_path(g.adjacency_matrix, method="D", unweighted=True, directed=False)
    bad = np.argwhere(np.isinf(d))
    if bad.size:
        i, j = bad[0]
        raise StructureError(f"graph is disconnected: vertices {i + 1} and {j + 1} are unreachable")
    return d.astype(np.int64)


def is_connected(g: Graph) -> bool:
    reached = csgraph.breadth_first_order(g.adjacency_matrix, 0, directed=False,
                                          return_predecessors=False)
    return reached.size == g.k


def connected_components(g: Graph) -> tuple[int, np.ndarray]:
    """Number of components and a label per vertex."""
    n, labels = csgraph.connected_components(g.adjacency_matrix, directed=False)
    return int(n), labels


# ---------------------------------------------------------------------------
# random graphs (used by tests and the verify command)


def random_tree(k: int, rng) -> Graph:
    rng = np.random.default_rng(rng)
    pairs = [(int(rng.integers(0, v)), v) for v in range(1, k)]
    perm = rng.permutation(k)
    return _from_pairs(k, [(int(perm[a]), int(perm[b])) for a, b in pairs])


def random_connected_graph(k: int, rng, p: float = 0.4) -> Graph:
    """Random spanning tree plus independent extra edges with probability ``p``."""
    rng = np.random.default_rng(rng)
    t = random_tree(k, rng)
    pairs = {tuple(e) for e in t.edges.tolist()}
    for i in range(k):
        for j in range(i + 1, k):
            if rng.random() < p:
                pairs.add((i, j))
    return _from_pairs(k, pairs)

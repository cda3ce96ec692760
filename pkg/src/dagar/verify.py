"""Oracle suites behind ``dagar verify``.

Each suite returns a JSON-ready dict with ``suite``, ``passed``,
``max_error`` and per-case details.
"""
from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np

from .graph import (
    Graph,
    _from_pairs,
    coordinate_sum_ordering,
    grid_graph,
    is_connected,
    load_us48,
    path_graph,
    random_connected_graph,
    random_tree,
    shortest_path_distances,
    tree_traversal_ordering,
)
from .linalg import dense_inverse, make_rng, permuted_ldl_psd
from .metrics import frobenius_ratio, rhs_grid, rhs_path
from .precision import (
    assemble_precision,
    bruteforce_orderfree,
    car_precision,
    dagar_factors,
    orderfree_precision,
)

__all__ = [
    "RHO_GRID",
    "all_connected_graphs",
    "verify_tree",
    "verify_grid",
    "verify_orderfree",
    "verify_frobenius",
    "verify_ldl",
    "SUITES",
]

RHO_GRID = tuple(j / 10 for j in range(1, 10))


def all_connected_graphs(k: int):
    """Every connected labelled graph on ``k`` vertices."""
    pairs = list(itertools.combinations(range(k), 2))
    for mask in range(1 << len(pairs)):
        chosen = [pairs[t] for t in range(len(pairs)) if mask >> t & 1]
        g = _from_pairs(k, chosen)
        if is_connected(g):
            yield g


def _report(suite, errors, tol, details):
    worst = max(errors) if errors else 0.0
    return {"suite": suite, "passed": bool(worst < tol), "max_error": worst, "tolerance": tol,
            "cases": len(errors), "details": details}


def verify_tree(n_trees: int = 50, max_k: int = 50, rhos: Sequence[float] = RHO_GRID,
                seed: int = 0, tol: float = 1e-10) -> dict:
    rng = make_rng(seed)
    errors, details = [], []
    for t in range(n_trees):
        k = int(rng.integers(2, max_k + 1))
        g = random_tree(k, rng)
        root = int(rng.integers(0, k))
        order = tree_traversal_ordering(g, root)
        d = shortest_path_distances(g)
        for rho in rhos:
            cov = dense_inverse(assemble_precision(dagar_factors(g, order, rho)))
            err = float(np.max(np.abs(cov - rho ** d)))
            errors.append(err)
        details.append({"tree": t, "k": k, "root": root + 1})
    return _report("tree", errors, tol, details)


def verify_grid(m: int = 10, n: int = 10, rhos: Sequence[float] = RHO_GRID, tol: float = 1e-10) -> dict:
    g = grid_graph(m, n)
    e = g.edges
    errors, details = [], []
    for direction in ("sum", "difference"):
        for decreasing in (False, True):
            order = coordinate_sum_ordering(g, direction, decreasing)
            for rho in rhos:
                cov = dense_inverse(assemble_precision(dagar_factors(g, order, rho)))
                var_err = float(np.max(np.abs(np.diag(cov) - 1.0)))
                cov_err = float(np.max(np.abs(cov[e[:, 0], e[:, 1]] - rho)))
                errors.append(max(var_err, cov_err))
                details.append({"direction": direction, "decreasing": decreasing, "rho": rho,
                                "variance_error": var_err, "neighbour_cov_error": cov_err})
    return _report("grid", errors, tol, details)


def verify_orderfree(max_k: int = 5, n_random: int = 100, random_k: Sequence[int] = (6, 7),
                     rhos: Sequence[float] = (0.3, 0.8), seed: int = 0, tol: float = 1e-10) -> dict:
    errors = []
    counts = {}
    for k in range(1, max_k + 1):
        graphs = list(all_connected_graphs(k))
        counts[k] = len(graphs)
        for g in graphs:
            for rho in rhos:
                diff = orderfree_precision(g, rho).to_dense() - bruteforce_orderfree(g, rho)
                errors.append(float(np.max(np.abs(diff))))
    rng = make_rng(seed)
    for t in range(n_random):
        k = int(random_k[t % len(random_k)])
        g = random_connected_graph(k, rng, p=float(rng.uniform(0.1, 0.6)))
        rho = float(rng.uniform(0, 0.95))
        diff = orderfree_precision(g, rho).to_dense() - bruteforce_orderfree(g, rho)
        errors.append(float(np.max(np.abs(diff))))
    return _report("orderfree", errors, tol, {"exhaustive_graphs": counts, "random_graphs": n_random})


def verify_frobenius(path_k: int = 2000, grid_m: int = 60,
                     rhos: Sequence[float] = (0.25, 0.5, 0.75, 1 - 1e-6), tol: float = 0.01) -> dict:
    errors, details = [], []
    gp, gg = path_graph(path_k), grid_graph(grid_m, grid_m)
    op, og = coordinate_sum_ordering(gp), coordinate_sum_ordering(gg)
    for rho in rhos:
        rp = frobenius_ratio(assemble_precision(dagar_factors(gp, op, rho)), orderfree_precision(gp, rho))
        rg = frobenius_ratio(assemble_precision(dagar_factors(gg, og, rho)), orderfree_precision(gg, rho))
        lp, lg = rhs_path(rho), rhs_grid(rho)
        errors += [abs(rp - lp), abs(rg - lg)]
        details.append({"rho": rho, "path_ratio": rp, "path_limit": lp, "grid_ratio": rg, "grid_limit": lg})
    return _report("frobenius", errors, tol, details)


def verify_ldl(tol: float = 1e-8) -> dict:
    errors, details = [], []
    for name, g in (("path100", path_graph(100)), ("grid10", grid_graph(10, 10)), ("us48", load_us48())):
        q = car_precision(g, variant="improper").to_dense()
        f = permuted_ldl_psd(q)
        p = f.permutation_matrix()
        err = float(np.max(np.abs(p @ q @ p.T - f.reconstruct())))
        zeros = int(np.sum(f.diag == 0.0))
        ok = zeros == 1
        errors.append(err if ok else math.inf)
        details.append({"graph": name, "reconstruction_error": err, "zero_pivots": zeros, "rank": f.rank})
    return _report("ldl", errors, tol, details)


SUITES = {
    "tree": verify_tree,
    "grid": verify_grid,
    "orderfree": verify_orderfree,
    "frobenius": verify_frobenius,
    "ldl": verify_ldl,
}

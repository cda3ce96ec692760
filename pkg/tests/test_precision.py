import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dagar.errors import ParameterError, StructureError, ValidationError
from dagar.graph import (
    complete_graph,
    coordinate_sum_ordering,
    from_edge_list,
    grid_graph,
    load_us48,
    make_ordering,
    path_graph,
    random_connected_graph,
    second_order_graph,
    star_graph,
)
from dagar.linalg import dense_cholesky, make_rng
from dagar.precision import (
    SparseSymmetric,
    assemble_precision,
    bruteforce_orderfree,
    car_precision,
    dagar_coefficients,
    dagar_factors,
    dagar_logdet,
    f_weight,
    orderfree_precision,
    quadratic_form,
    read_triplet,
    s_weight,
    write_triplet,
)


def dense_dagar(g, order, rho):
    """(I - B)' F (I - B) built entry by entry."""
    k = g.k
    lf = np.eye(k)
    f = np.zeros(k)
    for i in range(k):
        n = len(order.directed_neighbors[i])
        for j in order.directed_neighbors[i]:
            lf[i, j] = -rho / (1 + (n - 1) * rho ** 2)
        f[i] = (1 + (n - 1) * rho ** 2) / (1 - rho ** 2)
    return lf.T @ np.diag(f) @ lf


def test_coefficients_examples():
    b, tau = dagar_coefficients(np.array([0, 1, 3]), 0.5)
    assert b[0] == 0 and tau[0] == pytest.approx(1.0)
    assert b[1] == pytest.approx(0.5) and tau[1] == pytest.approx(1 / 0.75)
    assert b[2] == pytest.approx(1 / 3) and tau[2] == pytest.approx(2.0)


def test_rho_zero_identity():
    g = grid_graph(3, 3)
    cp = dagar_factors(g, coordinate_sum_ordering(g), 0.0)
    assert np.all(cp.b == 0) and np.allclose(cp.tau, 1)
    assert np.array_equal(assemble_precision(cp).to_dense(), np.eye(9))
    assert np.allclose(orderfree_precision(g, 0.0).to_dense(), np.eye(9), atol=1e-15)


def test_rho_out_of_range():
    g = path_graph(3)
    for rho in (-0.1, 1.0, 1.5):
        with pytest.raises(ParameterError):
            dagar_factors(g, coordinate_sum_ordering(g), rho)


def test_disconnected_needs_flag():
    g = from_edge_list(4, [(1, 2), (3, 4)])
    o = make_ordering(g, range(4))
    with pytest.raises(StructureError):
        dagar_factors(g, o, 0.5)
    q = assemble_precision(dagar_factors(g, o, 0.5, allow_disconnected=True)).to_dense()
    assert np.all(q[:2, 2:] == 0)


def test_path3_covariance_corner():
    g = path_graph(3)
    q = assemble_precision(dagar_factors(g, coordinate_sum_ordering(g), 0.5)).to_dense()
    assert np.linalg.inv(q)[0, 2] == pytest.approx(0.25, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.floats(0.0, 0.95), st.integers(0, 10 ** 6))
def test_fast_paths_match_dense(k, rho, seed):
    rng = make_rng(seed)
    g = random_connected_graph(k, rng, p=float(rng.uniform(0.05, 0.5)))
    o = make_ordering(g, rng.permutation(k))
    cp = dagar_factors(g, o, rho)
    q = dense_dagar(g, o, rho)
    assert np.max(np.abs(assemble_precision(cp).to_dense() - q)) < 1e-12
    assert abs(dagar_logdet(cp) - np.linalg.slogdet(q)[1]) < 1e-10
    w = rng.standard_normal(k)
    assert abs(quadratic_form(cp, w) - w @ q @ w) < 1e-10 * max(1.0, abs(w @ q @ w))


def test_logdet_and_quadratic_examples():
    g = path_graph(3)
    o = coordinate_sum_ordering(g)
    assert dagar_logdet(dagar_factors(g, o, 0.0)) == 0.0
    w = np.array([1.0, -2.0, 3.0])
    assert quadratic_form(dagar_factors(g, o, 0.5), np.zeros(3)) == 0.0
    assert quadratic_form(dagar_factors(g, o, 0.0), w) == pytest.approx(14.0)


def test_logdet_path3_value():
    # first vertex has tau = 1, the other two 1/(1 - rho^2)
    cp = dagar_factors(path_graph(3), coordinate_sum_ordering(path_graph(3)), 0.5)
    assert dagar_logdet(cp) == pytest.approx(-2 * math.log(0.75))


def test_f_weight_examples():
    for rho in (0.0, 0.3, 0.99):
        assert f_weight(rho, 1) == 1.0
    for n in range(1, 8):
        assert f_weight(0.0, n) == n * (n + 1) / 2
    assert f_weight(0.5, 3) == pytest.approx(4.6)
    assert s_weight(0.5) == pytest.approx(f_weight(0.5, 4))
    with pytest.raises(ParameterError):
        f_weight(0.5, 0)


def test_orderfree_path_interior():
    rho = 0.5
    q = orderfree_precision(path_graph(12), rho).to_dense()
    assert q[5, 5] == pytest.approx((3 + 6 * rho ** 2 + rho ** 4) / (3 * (1 + rho ** 2) * (1 - rho ** 2)))
    assert q[5, 5] == pytest.approx(1.622222222, abs=1e-8)
    assert q[5, 7] == pytest.approx(rho ** 2 / (3 * (1 + rho ** 2) * (1 - rho ** 2)))
    assert q[5, 7] == pytest.approx(0.0888888889, abs=1e-9)


def test_orderfree_pattern_is_second_order():
    g = grid_graph(5, 5)
    q = orderfree_precision(g, 0.6)
    h = second_order_graph(g)
    expected = {(i, j) for i, j in h.edges.tolist()} | {(i, i) for i in range(g.k)}
    assert q.pattern() == expected


def test_bruteforce_small_cases():
    rho = 0.5
    # a vertex without directed neighbours has unit conditional precision
    q1 = bruteforce_orderfree(path_graph(1), rho)
    assert q1[0, 0] == pytest.approx(1.0)
    g2 = path_graph(2)
    single = assemble_precision(dagar_factors(g2, coordinate_sum_ordering(g2), rho)).to_dense()
    assert np.allclose(bruteforce_orderfree(g2, rho), single, atol=1e-14)
    tri = complete_graph(3)
    assert np.max(np.abs(bruteforce_orderfree(tri, rho) - orderfree_precision(tri, rho).to_dense())) < 1e-12


def test_bruteforce_matches_loop_over_orderings():
    g = star_graph(3)
    rho = 0.7
    total = np.zeros((4, 4))
    for pi in itertools.permutations(range(4)):
        total += dense_dagar(g, make_ordering(g, pi), rho)
    assert np.max(np.abs(bruteforce_orderfree(g, rho) - total / 24)) < 1e-12


def test_bruteforce_size_guard():
    with pytest.raises(ValidationError):
        bruteforce_orderfree(path_graph(9), 0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 7), st.floats(0.0, 0.95), st.integers(0, 10 ** 6))
def test_orderfree_closed_form_matches_bruteforce(k, rho, seed):
    g = random_connected_graph(k, make_rng(seed), p=0.4)
    assert np.max(np.abs(orderfree_precision(g, rho).to_dense() - bruteforce_orderfree(g, rho))) < 1e-10


def test_car_examples():
    g = path_graph(3)
    assert np.array_equal(car_precision(g, 0.0).to_dense(), np.diag([1.0, 2.0, 1.0]))
    qi = car_precision(g, variant="improper")
    assert qi.singular
    d = qi.to_dense()
    assert np.array_equal(d, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    assert np.all(d.sum(axis=1) == 0)
    us = car_precision(load_us48(), 0.9)
    dense_cholesky(us)  # positive definite
    with pytest.raises(ParameterError):
        car_precision(g, 1.0)


def test_sparse_symmetric_ops():
    m = np.array([[2.0, -1, 0], [-1, 2, -1], [0, -1, 2]])
    q = SparseSymmetric.from_matrix(m)
    assert q.nnz == 5
    assert q[0, 1] == q[1, 0] == -1
    w = np.array([1.0, 2.0, 3.0])
    assert np.allclose(q @ w, m @ w)
    with pytest.raises(ValidationError):
        SparseSymmetric.from_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_triplet_roundtrip(tmp_path):
    q = orderfree_precision(grid_graph(4, 4), 0.3)
    p = tmp_path / "q.txt"
    write_triplet(q, p)
    r = read_triplet(p)
    assert np.array_equal(r.to_dense(), q.to_dense())
    header = p.read_text().splitlines()[0].split()
    assert header == ["16", str(q.nnz)]

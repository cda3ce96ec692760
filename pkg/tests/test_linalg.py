import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from dagar.errors import NotPositiveDefiniteError
from dagar.graph import (
    coordinate_sum_ordering,
    from_edge_list,
    grid_graph,
    load_us48,
    make_ordering,
    path_graph,
    random_connected_graph,
    random_tree,
    shortest_path_distances,
    tree_traversal_ordering,
)
from dagar.linalg import (
    SparseLowerTriangular,
    dense_cholesky,
    dense_inverse,
    elimination_tree,
    make_rng,
    permuted_ldl_psd,
    sample_mvn_precision,
    sparse_cholesky,
)
from dagar.precision import SparseSymmetric, assemble_precision, car_precision, dagar_factors, orderfree_precision


def test_cholesky_identity():
    f = sparse_cholesky(SparseSymmetric.from_matrix(np.eye(4)))
    assert np.array_equal(f.to_dense(), np.eye(4))


def test_cholesky_2x2():
    f = sparse_cholesky(SparseSymmetric.from_matrix(np.array([[2.0, 1.0], [1.0, 2.0]])))
    expected = np.array([[math.sqrt(2), 0.0], [1 / math.sqrt(2), math.sqrt(1.5)]])
    assert np.allclose(f.to_dense(), expected, atol=1e-15)


def test_cholesky_orderfree_grid():
    q = orderfree_precision(grid_graph(6, 6), 0.7)
    f = sparse_cholesky(q)
    ld = f.to_dense()
    assert np.max(np.abs(ld @ ld.T - q.to_dense())) < 1e-10
    assert np.allclose(ld, dense_cholesky(q), atol=1e-12)


def test_cholesky_reports_pivot():
    q = car_precision(path_graph(4), variant="improper")
    with pytest.raises(NotPositiveDefiniteError) as exc:
        sparse_cholesky(q)
    assert exc.value.pivot == 4


def test_elimination_tree_path():
    q = car_precision(path_graph(5), 0.5)
    assert list(elimination_tree(q.upper)) == [1, 2, 3, 4, -1]


def test_triangular_solves():
    q = orderfree_precision(grid_graph(4, 4), 0.4)
    f = sparse_cholesky(q)
    b = np.arange(16.0)
    x = f.solve_transpose(f.solve(b))
    assert np.allclose(q.to_dense() @ x, b)
    assert f.logdet_product() == pytest.approx(np.linalg.slogdet(q.to_dense())[1])


def test_ldl_identity():
    f = permuted_ldl_psd(np.eye(5))
    assert np.array_equal(f.permutation_matrix(), np.eye(5))
    assert np.allclose(f.b, 0) and np.allclose(f.diag, 1) and f.rank == 5


def test_ldl_improper_path3():
    q = car_precision(path_graph(3), variant="improper").to_dense()
    f = permuted_ldl_psd(q)
    p = f.permutation_matrix()
    assert np.sum(f.diag == 0) == 1 and f.rank == 2
    assert np.max(np.abs(p @ q @ p.T - f.reconstruct())) < 1e-8
    # unit lower triangular, zero pivots first
    assert np.allclose(np.diag(f.lower), 1) and np.allclose(np.triu(f.lower, 1), 0)
    assert f.diag[0] == 0


@pytest.mark.parametrize("g", [path_graph(100), grid_graph(10, 10), load_us48()],
                         ids=["path100", "grid10", "us48"])
def test_ldl_improper_graphs(g):
    q = car_precision(g, variant="improper").to_dense()
    f = permuted_ldl_psd(q)
    p = f.permutation_matrix()
    assert np.max(np.abs(p @ q @ p.T - f.reconstruct())) < 1e-8
    assert np.sum(f.diag == 0) == 1


def test_ldl_zero_pivot_per_component():
    g = from_edge_list(5, [(1, 2), (2, 3), (4, 5)])
    q = car_precision(g, variant="improper", allow_disconnected=True).to_dense()
    f = permuted_ldl_psd(q)
    assert np.sum(f.diag == 0) == 2 and f.rank == 3


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30), st.floats(0.0, 0.95), st.integers(0, 10 ** 6))
def test_ldl_nonsingular_dagar(k, rho, seed):
    rng = make_rng(seed)
    g = random_connected_graph(k, rng)
    q = assemble_precision(dagar_factors(g, make_ordering(g, rng.permutation(k)), rho)).to_dense()
    f = permuted_ldl_psd(q)
    p = f.permutation_matrix()
    assert f.rank == k
    assert np.max(np.abs(p @ q @ p.T - f.reconstruct())) < 1e-10


def test_ldl_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        permuted_ldl_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_sampling_identity_covariance():
    draws = sample_mvn_precision(np.eye(3), 1.0, 1, size=100_000)
    assert np.max(np.abs(np.cov(draws.T) - np.eye(3))) < 0.05


def test_sampling_dagar_path_lag1():
    g = path_graph(10)
    cp = dagar_factors(g, coordinate_sum_ordering(g), 0.5)
    draws = sample_mvn_precision(cp, 1.0, 2, size=100_000)
    lag1 = np.mean([np.corrcoef(draws[:, i], draws[:, i + 1])[0, 1] for i in range(9)])
    assert abs(lag1 - 0.5) < 0.02


def test_sampling_sparse_factor_scale():
    q = orderfree_precision(grid_graph(3, 3), 0.5)
    f = sparse_cholesky(q)
    draws = sample_mvn_precision(f, 4.0, 3, size=50_000)
    cov = np.linalg.inv(4.0 * q.to_dense())
    assert np.max(np.abs(np.cov(draws.T) - cov)) < 0.01


def test_sampling_deterministic():
    cp = dagar_factors(grid_graph(4, 4), coordinate_sum_ordering(grid_graph(4, 4)), 0.3)
    assert np.array_equal(sample_mvn_precision(cp, 1.0, 42), sample_mvn_precision(cp, 1.0, 42))


def test_dense_inverse_examples():
    assert np.array_equal(dense_inverse(np.eye(3)), np.eye(3))
    assert np.allclose(dense_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))
    g = random_tree(15, make_rng(0))
    rho = 0.6
    cov = dense_inverse(assemble_precision(dagar_factors(g, tree_traversal_ordering(g, 0), rho)))
    assert np.max(np.abs(cov - rho ** shortest_path_distances(g))) < 1e-10


def test_lower_triangular_rejects_upper():
    with pytest.raises(ValueError):
        SparseLowerTriangular(sp.csr_matrix(np.array([[1.0, 1.0], [0.0, 1.0]])))

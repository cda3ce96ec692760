import math

import numpy as np
import pytest

from dagar.errors import ValidationError
from dagar.graph import grid_graph, path_graph
from dagar.simulate import (
    CSV_COLUMNS,
    ExperimentConfig,
    cell_data,
    exp_gp_field,
    run_experiment,
    scaled_distances,
    simulate_poisson,
    simulate_response,
)


def test_scaled_distances_unit_neighbours():
    g = grid_graph(4, 4)
    d = scaled_distances(g.coords * 3.0, g)
    e = g.edges
    assert d[e[:, 0], e[:, 1]].mean() == pytest.approx(1.0)


def test_large_phi_is_independent():
    g = path_graph(5)
    draws = np.array([exp_gp_field(g.coords, 60.0, 0.25, s, graph=g) for s in range(20_000)])
    cov = np.cov(draws.T)
    assert np.allclose(np.diag(cov), 4.0, rtol=0.05)
    assert np.max(np.abs(cov - np.diag(np.diag(cov)))) < 0.15


def test_path_lag1_correlation():
    g = path_graph(20)
    draws = np.array([exp_gp_field(g.coords, -math.log(0.5), 1.0, s, graph=g) for s in range(10_000)])
    lag1 = np.mean([np.corrcoef(draws[:, i], draws[:, i + 1])[0, 1] for i in range(19)])
    assert abs(lag1 - 0.5) < 0.03


def test_field_deterministic_and_validated():
    g = grid_graph(3, 3)
    assert np.array_equal(exp_gp_field(g.coords, 1.0, 1.0, 7), exp_gp_field(g.coords, 1.0, 1.0, 7))
    with pytest.raises(ValidationError):
        exp_gp_field(g.coords, 0.0, 1.0, 1)
    with pytest.raises(ValidationError):
        exp_gp_field(np.zeros((2, 2)), 1.0, 1.0, 1)


def test_precision_mode_differs():
    g = grid_graph(3, 3)
    a = exp_gp_field(g.coords, 1.0, 1.0, 3, mode="covariance")
    b = exp_gp_field(g.coords, 1.0, 1.0, 3, mode="precision")
    assert not np.allclose(a, b)


def test_response_examples():
    w = np.zeros(3)
    X = np.ones((3, 2))
    assert np.array_equal(simulate_response(w, X, [1, 5], math.inf), np.full(3, 6.0))
    y = simulate_response(np.zeros(100_000), np.zeros((100_000, 1)), [0.0], 4.0, 1)
    assert y.var() == pytest.approx(0.25, rel=0.03)
    with pytest.raises(ValidationError):
        simulate_response(w, np.ones((2, 2)), [1, 5], 1.0)


def test_poisson_generator():
    g = grid_graph(3, 4)
    d = simulate_poisson(g, seed=1)
    assert d["observed"].shape == (12,) and np.all(d["observed"] >= 0)
    assert np.all((d["expected"] >= 20) & (d["expected"] <= 80))
    assert set(np.unique(d["x"])) <= {1.0, 2.0, 3.0, 4.0, 5.0}
    assert np.array_equal(simulate_poisson(g, seed=1)["observed"], d["observed"])


def test_config_validation():
    with pytest.raises(ValidationError):
        ExperimentConfig(rhos=[1.0])
    with pytest.raises(ValidationError):
        ExperimentConfig(replicates=0)
    full = ExperimentConfig.full_scale()
    assert full.replicates == 100 and full.iterations == 100_000


def test_cell_data_is_seeded_by_cell():
    cfg = ExperimentConfig(graphs=["grid10"], rhos=[0.3], ratios=[0.1], replicates=2)
    a, b = cell_data(cfg, 0, 0, 0, 0), cell_data(cfg, 0, 0, 0, 0)
    assert np.array_equal(a.y, b.y) and a.fit_seeds == b.fit_seeds
    c = cell_data(cfg, 0, 0, 0, 1)
    assert not np.array_equal(a.y, c.y)


def test_experiment_smoke(tmp_path):
    cfg = ExperimentConfig(graphs=["grid10"], rhos=[0.3], ratios=[0.1], replicates=1,
                           iterations=2000, burn_in=1000)
    res = run_experiment(cfg)
    assert len(res.rows) == 1 * 1 * 1 * 4 * 1
    assert all(np.isfinite(r["mse"]) and not r["error"] for r in res.rows)
    p = tmp_path / "out.csv"
    res.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS) and len(lines) == 5
    again = tmp_path / "again.csv"
    run_experiment(cfg).to_csv(again)
    assert again.read_bytes() == p.read_bytes()

"""Synthetic latent fields and responses, and the replicate sweep comparing
the four latent precision models on Gaussian data."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist

from .errors import DagarError, ValidationError
from .graph import Graph, coordinate_sum_ordering, grid_graph, load_us48, parse_graph_spec, path_graph
from .inference import MODEL_KINDS, MCMCConfig, ModelSpec, Priors, fit_gaussian
from .linalg import make_rng, sample_mvn_precision
from .precision import dagar_factors
from .metrics import mse

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "scaled_distances",
    "exp_gp_field",
    "simulate_response",
    "simulate_poisson",
    "named_graph",
    "CellData",
    "cell_data",
    "run_cell",
    "run_experiment",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("graph", "rho", "r", "model", "replicate", "mse", "beta1", "beta2")


def named_graph(name: str) -> Graph:
    if name == "path100":
        return path_graph(100)
    if name == "grid10":
        return grid_graph(10, 10)
    if name == "us48":
        return load_us48()
    return parse_graph_spec(name)


def scaled_distances(coords, g: Optional[Graph] = None) -> np.ndarray:
    """Euclidean distances, rescaled so the mean neighbour-pair distance is one."""
    coords = np.asarray(coords, dtype=float)
    d = cdist(coords, coords)
    if g is not None and g.e:
        e = g.edges
        d = d / d[e[:, 0], e[:, 1]].mean()
    return d


def exp_gp_field(coords, phi: float, tau_w: float, seed=None, *, graph: Optional[Graph] = None,
                 mode: str = "covariance") -> np.ndarray:
    """Draw a latent field from an exponential Gaussian process.

    ``M_ij = exp(-phi d_ij)``. In ``"covariance"`` mode ``w ~ N(0, cov=M/tau_w)``
    (marginal variance ``1/tau_w``); in ``"precision"`` mode ``M/tau_w`` is
    used as the precision instead.
    """
    if not phi > 0 or not tau_w > 0:
        raise ValidationError("phi and tau_w must be positive")
    d = scaled_distances(coords, graph)
    k = d.shape[0]
    off = d[~np.eye(k, dtype=bool)]
    if off.size and off.min() <= 0:
        raise ValidationError("embedding has coincident points")
    m = np.exp(-phi * d) / tau_w
    rng = make_rng(seed)
    z = rng.standard_normal(k)
    chol = sla.cholesky(m, lower=True)
    if mode == "covariance":
        return chol @ z
    if mode == "precision":
        return sla.solve_triangular(chol, z, lower=True, trans="T")
    raise ValidationError(f"mode must be 'covariance' or 'precision', got {mode!r}")


def simulate_response(w, X, beta, tau_e: float, seed=None) -> np.ndarray:
    """``y = X beta + w + eps`` with ``eps ~ N(0, 1/tau_e)``; ``tau_e = inf`` drops the noise."""
    w = np.asarray(w, dtype=float)
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if X.shape != (w.size, beta.size):
        raise ValidationError(f"design is {X.shape}, expected ({w.size}, {beta.size})")
    if not tau_e > 0:
        raise ValidationError("tau_e must be positive")
    y = X @ beta + w
    if math.isinf(tau_e):
        return y
    return y + make_rng(seed).standard_normal(w.size) / math.sqrt(tau_e)


def simulate_poisson(g: Graph, alpha: float = 0.1, beta: float = -0.12, rho: float = 0.3,
                     tau_w: float = 10.0, seed=None, *, expected_range=(20.0, 80.0),
                     covariate_range=(1, 5), ordering=None) -> dict:
    """Counts ``O_i ~ Poisson(E_i exp(alpha + beta x_i + w_i))`` with ``w`` drawn from
    the ordered DAGAR prior.

    ``E_i`` is uniform on ``expected_range`` and ``x_i`` an integer score
    uniform on ``covariate_range``.
    """
    rng = make_rng(seed)
    ordering = coordinate_sum_ordering(g) if ordering is None else ordering
    w = sample_mvn_precision(dagar_factors(g, ordering, rho), tau_w, rng)
    expected = rng.uniform(*expected_range, size=g.k)
    x = rng.integers(covariate_range[0], covariate_range[1] + 1, size=g.k).astype(float)
    counts = rng.poisson(expected * np.exp(alpha + beta * x + w)).astype(float)
    return {"observed": counts, "expected": expected, "x": x, "w": w}


@dataclass
class ExperimentConfig:
    graphs: list = field(default_factory=lambda: ["grid10"])
    rhos: list = field(default_factory=lambda: [j / 10 for j in range(1, 10)])
    tau_w: float = 0.25
    ratios: list = field(default_factory=lambda: [0.1, 0.5])
    replicates: int = 20
    beta: list = field(default_factory=lambda: [1.0, 5.0])
    models: list = field(default_factory=lambda: list(MODEL_KINDS))
    iterations: int = 10_000
    burn_in: int = 5_000
    seed: int = 0
    field_mode: str = "covariance"
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if any(not 0 < r < 1 for r in self.rhos):
            raise ValidationError("rho values must lie in (0, 1)")
        if any(not r > 0 for r in self.ratios):
            raise ValidationError("noise ratios must be positive")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls(**json.load(fh))

    @classmethod
    def full_scale(cls, **kw) -> "ExperimentConfig":
        base = dict(graphs=["path100", "grid10", "us48"], replicates=100,
                    iterations=100_000, burn_in=50_000)
        base.update(kw)
        return cls(**base)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list

    def table(self, model=None, **where) -> list:
        out = []
        for row in self.rows:
            if model is not None and row["model"] != model:
                continue
            if all(row[key] == val for key, val in where.items()):
                out.append(row)
        return out

    def mean_mse(self, model, **where) -> float:
        vals = [r["mse"] for r in self.table(model, **where)]
        return float(np.mean(vals)) if vals else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(CSV_COLUMNS)
            for r in self.rows:
                wr.writerow([r["graph"], _fmt(r["rho"]), _fmt(r["r"]), r["model"], r["replicate"],
                             _fmt(r["mse"]), _fmt(r["beta"][0]), _fmt(r["beta"][1])])

    def manifest(self) -> dict:
        return {"config": asdict(self.config),
                "cells": len({(r["graph"], r["rho"], r["r"], r["replicate"]) for r in self.rows}),
                "fit_seconds": float(sum(r["seconds"] for r in self.rows)),
                "failures": [r for r in self.rows if r.get("error")]}


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _cell_seed(seed: int, key: Sequence[int]) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(v) for v in key))


@dataclass
class CellData:
    graph: Graph
    w: np.ndarray
    X: np.ndarray
    y: np.ndarray
    fit_seeds: dict


def cell_data(cfg: ExperimentConfig, gi: int, ri: int, ni: int, rep: int) -> CellData:
    """Simulated dataset and per-model MCMC seeds for one cell of the sweep."""
    g = named_graph(cfg.graphs[gi])
    if g.coords is None:
        raise ValidationError(f"graph {cfg.graphs[gi]!r} has no embedding to simulate from")
    rho, ratio = cfg.rhos[ri], cfg.ratios[ni]
    ss = _cell_seed(cfg.seed, (gi, ri, ni, rep))
    data_ss, fit_ss = ss.spawn(2)
    rng = make_rng(data_ss)
    w_true = exp_gp_field(g.coords, -math.log(rho), cfg.tau_w, rng, graph=g, mode=cfg.field_mode)
    X = rng.standard_normal((g.k, len(cfg.beta)))
    y = simulate_response(w_true, X, cfg.beta, cfg.tau_w / ratio, rng)
    seeds = fit_ss.generate_state(len(cfg.models))
    return CellData(g, w_true, X, y, {m: int(s) for m, s in zip(cfg.models, seeds)})


def run_cell(cfg: ExperimentConfig, gi: int, ri: int, ni: int, rep: int) -> list:
    """Simulate one dataset and fit every model to it."""
    name = cfg.graphs[gi]
    rho, ratio = cfg.rhos[ri], cfg.ratios[ni]
    data = cell_data(cfg, gi, ri, ni, rep)
    g, w_true, X, y = data.graph, data.w, data.X, data.y
    ordering = coordinate_sum_ordering(g)
    rows = []
    for model in cfg.models:
        row = {"graph": name, "rho": rho, "r": ratio, "model": model, "replicate": rep}
        t0 = time.perf_counter()
        try:
            spec = ModelSpec(model, g, X, ordering=ordering if model == "dagar" else None)
            mc = MCMCConfig(iterations=cfg.iterations, burn_in=cfg.burn_in, seed=data.fit_seeds[model])
            chain = fit_gaussian(y, spec, Priors(), mc)
            row["mse"] = mse(w_true, chain.posterior_mean_w())
            row["beta"] = [float(v) for v in np.median(chain.beta, axis=0)]
            row["beta_sd"] = [float(v) for v in chain.beta.std(axis=0, ddof=1)]
            row["error"] = ""
        except DagarError as exc:
            log.warning("cell %s failed: %s", row, exc)
            row.update(mse=float("nan"), beta=[float("nan")] * len(cfg.beta),
                       beta_sd=[float("nan")] * len(cfg.beta), error=str(exc))
        row["seconds"] = time.perf_counter() - t0
        rows.append(row)
    return rows


def _run_cell_args(args):
    return run_cell(*args)


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentResult:
    """Full factorial sweep; rows come back sorted by cell key regardless of worker count."""
    jobs = [(cfg, gi, ri, ni, rep)
            for gi in range(len(cfg.graphs))
            for ri in range(len(cfg.rhos))
            for ni in range(len(cfg.ratios))
            for rep in range(cfg.replicates)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_run_cell_args, jobs))
    else:
        chunks = []
        for n, job in enumerate(jobs):
            chunks.append(run_cell(*job))
            if progress is not None:
                progress(n + 1, len(jobs))
    rows = [row for chunk in chunks for row in chunk]
    return ExperimentResult(cfg, rows)

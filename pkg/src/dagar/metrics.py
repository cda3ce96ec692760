"""Model assessment: neighbour-pair correlation, MSE, DIC, leave-one-out
predictive density, and ordered vs order-free Frobenius comparisons."""
from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import NumericalError, ValidationError
from .graph import Graph, coordinate_sum_ordering
from .inference import ChainOutput, LatentPrecision, MCMCConfig, ModelSpec, Priors, fit
from .linalg import dense_inverse, make_rng
from .precision import (
    CholeskyPrecision,
    SparseSymmetric,
    assemble_precision,
    car_precision,
    dagar_factors,
    orderfree_precision,
    s_weight,
)

__all__ = [
    "avg_neighbor_correlation",
    "correlation_curve",
    "model_precision",
    "mse",
    "dic",
    "dic_terms",
    "loo_lppd",
    "frobenius_ratio",
    "rhs_path",
    "rhs_grid",
    "CORRELATION_MAX_K",
]

CORRELATION_MAX_K = 2000


def avg_neighbor_correlation(q: Union[SparseSymmetric, CholeskyPrecision], g: Graph) -> float:
    """Average implied correlation over ordered neighbour pairs.

    ``sum_{i~j} corr(w_i, w_j) / sum_i n_i`` with the covariance obtained by
    inverting ``q`` densely.
    """
    if isinstance(q, CholeskyPrecision):
        q = assemble_precision(q)
    if q.singular:
        raise NumericalError("cannot compute correlations from a singular precision")
    if q.k != g.k:
        raise ValidationError(f"precision is {q.k}x{q.k} but graph has {g.k} vertices")
    if q.k > CORRELATION_MAX_K:
        raise ValidationError(f"dense inversion refused for k={q.k} > {CORRELATION_MAX_K}")
    cov = dense_inverse(q)
    sd = np.sqrt(np.diag(cov))
    e = g.edges
    if e.shape[0] == 0:
        return 0.0
    corr = cov[e[:, 0], e[:, 1]] / (sd[e[:, 0]] * sd[e[:, 1]])
    return float(2.0 * corr.sum() / g.degrees.sum())


def model_precision(g: Graph, model: str, rho: float, ordering=None) -> SparseSymmetric:
    """Assembled precision for ``model`` in {dagar, dagar_of, car}."""
    if model == "dagar":
        ordering = coordinate_sum_ordering(g) if ordering is None else ordering
        return assemble_precision(dagar_factors(g, ordering, rho))
    if model in ("dagar_of", "dagar-of"):
        return orderfree_precision(g, rho)
    if model in ("car", "car_proper"):
        return car_precision(g, rho, "proper")
    raise ValidationError(f"unknown model {model!r}")


def correlation_curve(graphs: dict, rhos: Sequence[float], models: Sequence[str]) -> list[tuple]:
    """Rows ``(graph, rho, model, c(rho))``; ``rho = 0`` gives 0 by definition of independence."""
    rows = []
    for name, g in graphs.items():
        for model in models:
            for rho in rhos:
                value = avg_neighbor_correlation(model_precision(g, model, rho), g)
                rows.append((name, float(rho), model, value))
    return rows


def mse(true_w, estimate_w) -> float:
    a = np.asarray(true_w, dtype=float)
    b = np.asarray(estimate_w, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def dic_terms(chain: ChainOutput) -> dict:
    """``Dbar``, ``Dhat`` (deviance at posterior means), ``pD`` and ``DIC``."""
    if chain.loglik is None or len(chain.loglik) == 0 or chain.loglik_at_mean is None:
        raise ValidationError("chain carries no log-likelihood trace")
    dbar = float(np.mean(-2.0 * np.asarray(chain.loglik)))
    dhat = -2.0 * float(chain.loglik_at_mean)
    pd = dbar - dhat
    return {"Dbar": dbar, "Dhat": dhat, "pD": pd, "DIC": dbar + pd}


def dic(chain: ChainOutput) -> float:
    return dic_terms(chain)["DIC"]


def _log_density(link, y_i, eta, tau_e=None, log_offset=0.0):
    if link == "identity":
        return 0.5 * (np.log(tau_e) - math.log(2 * math.pi)) - 0.5 * tau_e * (y_i - eta) ** 2
    lam = eta + log_offset
    return y_i * lam - np.exp(lam) - gammaln(y_i + 1.0)


def loo_lppd(response, spec: ModelSpec, priors: Optional[Priors] = None,
             cfg: Optional[MCMCConfig] = None, *, inner_draws: int = 200,
             max_draws: int = 200, seed=None, regions: Optional[Iterable[int]] = None) -> float:
    """Sum over regions of the log predictive density of each held-out observation.

    Each region's observation is dropped and the model refitted. For each
    retained posterior draw the held-out latent effect is drawn
    ``inner_draws`` times from its conditional prior given the other
    effects, and the observation density is averaged over all of them.
    """
    cfg = cfg or MCMCConfig.desk()
    response = np.asarray(response, dtype=float)
    rng = make_rng(cfg.seed + 7919 if seed is None else seed)
    latent = LatentPrecision(spec)
    k = spec.k
    total = 0.0
    for i in (range(k) if regions is None else regions):
        mask = np.ones(k, dtype=bool)
        mask[i] = False
        try:
            chain = fit(response, spec, priors, cfg, observed=mask)
        except Exception as exc:
            raise NumericalError(f"leave-one-out refit for region {i + 1} failed: {exc}") from exc
        n = chain.n_draws
        idx = np.unique(np.linspace(0, n - 1, min(n, max_draws)).astype(int))
        logs = []
        for s in idx:
            st = latent.evaluate(float(chain.rho[s]))
            q = latent.dense(st)
            w = chain.w[s]
            qii = q[i, i]
            cond_mean = -(q[i] @ w - qii * w[i]) / qii
            cond_sd = 1.0 / math.sqrt(chain.tau_w[s] * qii)
            wi = cond_mean + cond_sd * rng.standard_normal(inner_draws)
            eta = spec.X[i] @ chain.beta[s] + wi
            if spec.link == "identity":
                logs.append(_log_density("identity", response[i], eta, chain.tau_e[s]))
            else:
                logs.append(_log_density("log", response[i], eta, log_offset=math.log(spec.offsets[i])))
        logs = np.concatenate(logs)
        total += float(logsumexp(logs) - math.log(logs.size))
    return total


def frobenius_ratio(q: SparseSymmetric, q_of: SparseSymmetric) -> float:
    """``||Q - Q_OF||_F / ||Q_OF||_F``."""
    if q.k != q_of.k:
        raise ValidationError(f"dimension mismatch: {q.k} vs {q_of.k}")
    a, b = q.to_scipy(), q_of.to_scipy()
    diff = (a - b).tocsr()
    num = math.sqrt(float(diff.multiply(diff).sum()))
    den = math.sqrt(float(b.multiply(b).sum()))
    return num / den


def _check_unit(rho):
    rho = float(rho)
    if not 0.0 <= rho <= 1.0:
        raise ValidationError(f"rho must lie in [0, 1], got {rho}")
    return rho


def rhs_path(rho: float) -> float:
    """Large-``k`` limit of the Frobenius ratio on a path graph."""
    r = _check_unit(rho)
    r2, r4 = r * r, r ** 4
    num = 4 * r ** 8 + 2 * r4
    den = (3 + 6 * r2 + r4) ** 2 + 18 * r2 * (1 + r2) ** 2 + 2 * r4
    return math.sqrt(num / den)


def rhs_grid(rho: float) -> float:
    """Large-``m`` limit of the Frobenius ratio on an ``m x m`` grid."""
    r = _check_unit(rho)
    r2 = r * r
    s = s_weight(r)
    h = 1.0 / 6.0 - s / 60.0
    num = (r2 * r2 * (s / 5 - 2 / (1 + r2)) ** 2
           + 2 * (1.0 / 3.0 - s / 30 - r2 / (1 + r2)) ** 2
           + 12 * h * h)
    den = (1 + r2 + r2 * s / 5) ** 2 + 4 * r2 + 20 * h * h
    return math.sqrt(num / den)

"""MCMC for the hierarchical areal model

    y_i | beta, w  ~  pr(y_i | x_i' beta + w_i)
    w | tau_w, rho ~  N(0, precision tau_w Q(rho))

with Gaussian (identity link, Gibbs) or Poisson (log link with offsets,
Metropolis) responses and any of the four latent precision models.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
from scipy.special import expit, gammaln, logit

from .errors import NumericalError, ValidationError
from .graph import Graph, Ordering, connected_components, coordinate_sum_ordering
from .linalg import dense_cholesky, make_rng, sparse_cholesky
from .precision import (
    OrderFreeBasis,
    SparseSymmetric,
    dagar_coefficients,
)

log = logging.getLogger(__name__)

__all__ = [
    "MODEL_KINDS",
    "ModelSpec",
    "Priors",
    "MCMCConfig",
    "ChainOutput",
    "LatentPrecision",
    "GaussianSampler",
    "PoissonSampler",
    "fit_gaussian",
    "fit_poisson",
    "fit",
    "posterior_summary",
    "batch_means_ess",
    "beta_conditional",
    "w_conditional",
    "tau_w_conditional",
    "tau_e_conditional",
    "gaussian_loglik",
    "poisson_loglik",
]

MODEL_KINDS = ("dagar", "dagar_of", "car_proper", "car_improper")
DENSE_LIMIT = 2000
TARGET_ACCEPT = 0.44


def _canonical_kind(kind: str) -> str:
    k = kind.lower().replace("-", "_")
    aliases = {"dagar_of": "dagar_of", "of": "dagar_of", "car": "car_proper",
               "icar": "car_improper", "car_proper": "car_proper",
               "car_improper": "car_improper", "dagar": "dagar"}
    if k not in aliases:
        raise ValidationError(f"unknown model kind {kind!r}; choose from {', '.join(MODEL_KINDS)}")
    return aliases[k]


@dataclass
class ModelSpec:
    """Latent precision model, design matrix and (for the log link) offsets."""

    kind: str
    graph: Graph
    X: np.ndarray
    ordering: Optional[Ordering] = None
    link: str = "identity"
    offsets: Optional[np.ndarray] = None

    def __post_init__(self):
        self.kind = _canonical_kind(self.kind)
        k = self.graph.k
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.X.shape[0] != k:
            raise ValidationError(f"design matrix has {self.X.shape[0]} rows, graph has {k} vertices")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("design matrix has non-finite entries")
        if self.X.shape[1] and np.linalg.matrix_rank(self.X) < self.X.shape[1]:
            raise ValidationError("design matrix is not of full column rank")
        if self.link not in ("identity", "log"):
            raise ValidationError(f"link must be 'identity' or 'log', got {self.link!r}")
        if self.kind == "dagar":
            if self.ordering is None:
                self.ordering = coordinate_sum_ordering(self.graph)
            if self.ordering.k != k:
                raise ValidationError("ordering does not match the graph")
        if self.link == "log":
            if self.offsets is None:
                raise ValidationError("log link needs expected counts (offsets)")
            self.offsets = np.asarray(self.offsets, dtype=float)
            if self.offsets.shape != (k,) or np.any(~(self.offsets > 0)):
                raise ValidationError("expected counts must be positive, one per region")

    @property
    def k(self) -> int:
        return self.graph.k

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def intercept_column(self) -> Optional[int]:
        for c in range(self.p):
            if np.all(self.X[:, c] == 1.0):
                return c
        return None


@dataclass
class Priors:
    """beta ~ N(0, I / beta_precision); tau_w, tau_e ~ Gamma(shape, rate); rho ~ U(0, 1).

    With ``gamma_parametrisation="scale"`` the second Gamma parameter is read
    as a scale instead of a rate.
    """

    beta_precision: float = 1e-3
    tau_w_shape: float = 2.0
    tau_w_rate: float = 1.0
    tau_e_shape: float = 2.0
    tau_e_rate: float = 0.1
    gamma_parametrisation: str = "rate"

    def __post_init__(self):
        for name in ("beta_precision", "tau_w_shape", "tau_w_rate", "tau_e_shape", "tau_e_rate"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"prior hyperparameter {name} must be positive")
        if self.gamma_parametrisation not in ("rate", "scale"):
            raise ValidationError("gamma_parametrisation must be 'rate' or 'scale'")

    def rate(self, which: str) -> float:
        v = getattr(self, f"{which}_rate")
        return v if self.gamma_parametrisation == "rate" else 1.0 / v


@dataclass
class MCMCConfig:
    iterations: int = 100_000
    burn_in: int = 50_000
    thin: int = 1
    seed: int = 0
    proposal_sd: dict = field(default_factory=lambda: {"rho": 0.5, "w": 0.5, "beta": 1.0})
    adapt: bool = True
    fixed: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValidationError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if any(not v > 0 for v in self.proposal_sd.values()):
            raise ValidationError("proposal standard deviations must be positive")

    @classmethod
    def desk(cls, seed: int = 0, **kw) -> "MCMCConfig":
        return cls(iterations=10_000, burn_in=5_000, seed=seed, **kw)

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ChainOutput:
    """Retained draws plus per-draw data log-likelihoods."""

    kind: str
    link: str
    beta: np.ndarray
    w: np.ndarray
    tau_w: np.ndarray
    tau_e: Optional[np.ndarray]
    rho: np.ndarray
    loglik: np.ndarray
    loglik_at_mean: float
    acceptance: dict
    config: dict
    seconds: float = 0.0

    @property
    def n_draws(self) -> int:
        return self.rho.size

    def scalar_columns(self) -> dict[str, np.ndarray]:
        cols = {f"beta{j + 1}": self.beta[:, j] for j in range(self.beta.shape[1])}
        cols["tau_w"] = self.tau_w
        if self.tau_e is not None:
            cols["tau_e"] = self.tau_e
        cols["rho"] = self.rho
        cols["loglik"] = self.loglik
        return cols

    def posterior_mean_w(self) -> np.ndarray:
        return self.w.mean(axis=0)


# ---------------------------------------------------------------------------
# latent precision models


class LatentPrecision:
    """``Q(rho)`` for one model kind with the cheap operations a sampler needs.

    ``evaluate(rho)`` returns a ``state`` dict with ``rho``, ``logdet`` and a
    lazily built dense ``Q``; ``quad(state, w)`` gives ``w' Q w``.
    """

    def __init__(self, spec: ModelSpec):
        self.kind = spec.kind
        g = spec.graph
        self.graph = g
        self.k = g.k
        ncomp, _ = connected_components(g)
        self.rank = g.k - ncomp if self.kind == "car_improper" else g.k
        self.fixed_rho = 1.0 if self.kind == "car_improper" else None
        self._adj = g.adjacency_matrix
        self._adj_dense = self._adj.toarray()
        deg = g.degrees.astype(float)
        self._deg = deg
        if self.kind == "dagar":
            self.ordering = spec.ordering
            self._dm = spec.ordering.directed_matrix
            self._dm_dense = self._dm.toarray()
            self._counts = spec.ordering.directed_counts.astype(float)
        elif self.kind == "dagar_of":
            self._basis = OrderFreeBasis(g)
        elif self.kind == "car_proper":
            if np.any(deg == 0):
                raise ValidationError("proper CAR is singular with isolated vertices")
            s = 1.0 / np.sqrt(deg)
            self._car_eig = np.linalg.eigvalsh(s[:, None] * self._adj_dense * s[None, :])
            self._logdeg = float(np.sum(np.log(deg)))

    def evaluate(self, rho: float) -> dict:
        st = {"rho": rho}
        if self.kind == "dagar":
            b, tau = dagar_coefficients(self._counts, rho)
            st["b"], st["tau"] = b, tau
            st["logdet"] = float(np.sum(np.log(tau)))
        elif self.kind == "dagar_of":
            q = self._basis.dense(rho)
            chol = self._factor(q)
            st["Q"] = q
            st["logdet"] = 2.0 * float(np.sum(np.log(np.diag(chol) if isinstance(chol, np.ndarray)
                                                     else chol.diagonal())))
        elif self.kind == "car_proper":
            st["logdet"] = self._logdeg + float(np.sum(np.log1p(-rho * self._car_eig)))
        else:
            st["logdet"] = 0.0  # improper: constant pseudo-determinant, never differenced
        return st

    def _factor(self, q):
        if self.k <= DENSE_LIMIT:
            return dense_cholesky(q)
        return sparse_cholesky(SparseSymmetric.from_matrix(q))

    def dense(self, st: dict) -> np.ndarray:
        if "Q" not in st:
            rho = st["rho"]
            if self.kind == "dagar":
                lf = np.eye(self.k) - st["b"][:, None] * self._dm_dense
                st["Q"] = lf.T @ (st["tau"][:, None] * lf)
            elif self.kind == "dagar_of":
                st["Q"] = self._basis.dense(rho)
            else:
                st["Q"] = np.diag(self._deg) - rho * self._adj_dense
        return st["Q"]

    def quad(self, st: dict, w: np.ndarray) -> float:
        if self.kind == "dagar":
            r = w - st["b"] * (self._dm @ w)
            return float(np.dot(st["tau"], r * r))
        if self.kind == "dagar_of":
            return float(w @ st["Q"] @ w)
        return float(self._deg @ (w * w) - st["rho"] * (w @ (self._adj @ w)))

    def log_density(self, st: dict, w: np.ndarray, tau_w: float) -> float:
        """Log density of ``w`` up to an additive constant independent of all parameters."""
        return 0.5 * self.rank * math.log(tau_w) + 0.5 * st["logdet"] - 0.5 * tau_w * self.quad(st, w)


# ---------------------------------------------------------------------------
# full conditionals (Gaussian model); exposed so tests can check them by hand


def beta_conditional(X, resid, tau_e, beta_precision):
    """Mean and precision of ``beta | rest`` where ``resid = y - w``."""
    prec = tau_e * X.T @ X + beta_precision * np.eye(X.shape[1])
    mean = np.linalg.solve(prec, tau_e * X.T @ resid)
    return mean, prec


def w_conditional(Q, resid, tau_e, tau_w, observed=None):
    """Mean and precision of ``w | rest`` where ``resid = y - X beta``."""
    k = Q.shape[0]
    obs = np.ones(k) if observed is None else observed.astype(float)
    prec = tau_w * Q + np.diag(tau_e * obs)
    mean = np.linalg.solve(prec, tau_e * obs * resid)
    return mean, prec


def tau_w_conditional(quad, rank, shape, rate):
    """Shape and rate of ``tau_w | w, rho``."""
    return shape + 0.5 * rank, rate + 0.5 * quad


def tau_e_conditional(sse, n_obs, shape, rate):
    """Shape and rate of ``tau_e | y, beta, w``."""
    return shape + 0.5 * n_obs, rate + 0.5 * sse


def gaussian_loglik(y, eta, tau_e, observed=None) -> float:
    r = (y - eta) if observed is None else (y - eta)[observed]
    return float(0.5 * r.size * (math.log(tau_e) - math.log(2 * math.pi)) - 0.5 * tau_e * np.dot(r, r))


def poisson_loglik(counts, eta, observed=None) -> float:
    """``eta`` includes the log offset."""
    if observed is not None:
        counts, eta = counts[observed], eta[observed]
    return float(np.sum(counts * eta - np.exp(eta) - gammaln(counts + 1.0)))


# ---------------------------------------------------------------------------
# samplers


class _RobbinsMonro:
    """Log-scale proposal SD tuned towards a target acceptance rate during burn-in."""

    def __init__(self, sd, target=TARGET_ACCEPT, enabled=True):
        self.log_sd = np.log(np.asarray(sd, dtype=float))
        self.target = target
        self.enabled = enabled
        self.t = 0

    @property
    def sd(self):
        return np.exp(self.log_sd)

    def update(self, accepted):
        if not self.enabled:
            return
        self.t += 1
        gamma = min(0.5, 10.0 / (self.t + 10) ** 0.6)
        self.log_sd = self.log_sd + gamma * (np.asarray(accepted, dtype=float) - self.target)


class _Sampler:
    """Shared chain bookkeeping."""

    blocks: tuple[str, ...] = ()

    def __init__(self, spec: ModelSpec, priors: Priors, cfg: MCMCConfig, observed=None):
        self.spec = spec
        self.priors = priors
        self.cfg = cfg
        self.rng = make_rng(cfg.seed)
        self.latent = LatentPrecision(spec)
        k = spec.k
        self.observed = (np.ones(k, dtype=bool) if observed is None
                         else np.asarray(observed, dtype=bool).copy())
        if self.observed.shape != (k,):
            raise ValidationError("observation mask must have one entry per region")
        self.n_obs = int(self.observed.sum())
        self.intercept = spec.intercept_column()
        fixed = dict(cfg.fixed)
        if self.latent.fixed_rho is not None:
            fixed["rho"] = self.latent.fixed_rho
        self.fixed = fixed
        init = cfg.init
        rho0 = float(fixed.get("rho", init.get("rho", 0.5)))
        self.rho = rho0
        self.pstate = self.latent.evaluate(rho0)
        self.tau_w = float(fixed.get("tau_w", init.get("tau_w", 1.0)))
        self.w = np.array(init.get("w", np.zeros(k)), dtype=float)
        self.rho_tuner = _RobbinsMonro(cfg.proposal_sd.get("rho", 0.5), enabled=cfg.adapt)
        self.accepts = {b: 0 for b in self.blocks}
        self.tries = {b: 0 for b in self.blocks}
        self.burning = True

    def _tally(self, block, acc, n=1):
        if not self.burning:
            self.accepts[block] += acc
            self.tries[block] += n

    def update_tau_w(self):
        if "tau_w" in self.fixed:
            return
        shape, rate = tau_w_conditional(self.latent.quad(self.pstate, self.w), self.latent.rank,
                                        self.priors.tau_w_shape, self.priors.rate("tau_w"))
        self.tau_w = self.rng.gamma(shape, 1.0 / rate)

    def update_rho(self):
        if "rho" in self.fixed:
            return
        rho = self.rho
        sd = float(self.rho_tuner.sd)
        z = logit(rho) + sd * self.rng.standard_normal()
        prop = float(expit(z))
        accepted = False
        if 0.0 < prop < 1.0:
            new = self.latent.evaluate(prop)
            cur = self.latent.log_density(self.pstate, self.w, self.tau_w)
            try_ = self.latent.log_density(new, self.w, self.tau_w)
            log_ratio = try_ - cur + math.log(prop * (1 - prop)) - math.log(rho * (1 - rho))
            if math.log(self.rng.random()) < log_ratio:
                self.rho, self.pstate = prop, new
                accepted = True
        if self.burning:
            self.rho_tuner.update(accepted)
        self._tally("rho", accepted)

    def recentre(self):
        """Sum-to-zero constraint for the intrinsic model, level moved to the intercept."""
        if self.spec.kind != "car_improper" or self.intercept is None:
            return
        m = self.w.mean()
        self.w -= m
        self.beta[self.intercept] += m

    def sweep(self):
        raise NotImplementedError

    def loglik(self) -> float:
        raise NotImplementedError

    def loglik_at(self, beta, w, tau_e=None) -> float:
        raise NotImplementedError

    def run(self, progress: Optional[Callable[[int], None]] = None) -> ChainOutput:
        cfg = self.cfg
        n = cfg.n_draws
        k, p = self.spec.k, self.spec.p
        out_beta = np.empty((n, p))
        out_w = np.empty((n, k))
        out_tw = np.empty(n)
        out_te = np.empty(n) if self.has_tau_e else None
        out_rho = np.empty(n)
        out_ll = np.empty(n)
        t0 = time.perf_counter()
        j = 0
        for it in range(cfg.iterations):
            self.burning = it < cfg.burn_in
            self.sweep()
            if not self.burning and (it - cfg.burn_in) % cfg.thin == 0 and j < n:
                out_beta[j] = self.beta
                out_w[j] = self.w
                out_tw[j] = self.tau_w
                if out_te is not None:
                    out_te[j] = self.tau_e
                out_rho[j] = self.rho
                out_ll[j] = self.loglik()
                j += 1
            if progress is not None and it % 1000 == 0:
                progress(it)
        if not np.all(np.isfinite(out_ll)):
            raise NumericalError("non-finite log-likelihood in chain")
        at_mean = self.loglik_at(out_beta.mean(axis=0), out_w.mean(axis=0),
                                 None if out_te is None else float(out_te.mean()))
        acc = {b: (self.accepts[b] / self.tries[b] if self.tries[b] else float("nan"))
               for b in self.blocks}
        conf = asdict(cfg)
        conf["priors"] = asdict(self.priors)
        return ChainOutput(kind=self.spec.kind, link=self.spec.link, beta=out_beta, w=out_w,
                           tau_w=out_tw, tau_e=out_te, rho=out_rho, loglik=out_ll,
                           loglik_at_mean=at_mean, acceptance=acc, config=conf,
                           seconds=time.perf_counter() - t0)


class GaussianSampler(_Sampler):
    """Gibbs for beta, w, tau_w, tau_e; random-walk Metropolis (logit scale) for rho."""

    blocks = ("rho",)
    has_tau_e = True

    def __init__(self, y, spec: ModelSpec, priors: Priors, cfg: MCMCConfig, observed=None):
        if spec.link != "identity":
            raise ValidationError("Gaussian sampler needs the identity link")
        super().__init__(spec, priors, cfg, observed)
        y = np.asarray(y, dtype=float)
        if y.shape != (spec.k,):
            raise ValidationError(f"response has shape {y.shape}, expected ({spec.k},)")
        if not np.all(np.isfinite(y[self.observed])):
            raise ValidationError("response has non-finite values")
        self.y = np.where(self.observed, y, 0.0)
        self.tau_e = float(self.fixed.get("tau_e", cfg.init.get("tau_e", 1.0)))
        X = spec.X
        if "beta" in cfg.init:
            self.beta = np.array(cfg.init["beta"], dtype=float)
        elif spec.p and self.n_obs > spec.p:
            Xo = X[self.observed]
            self.beta = np.linalg.lstsq(Xo, self.y[self.observed], rcond=None)[0]
        else:
            self.beta = np.zeros(spec.p)
        self._XtX = X[self.observed].T @ X[self.observed]
        self._obs_f = self.observed.astype(float)

    def update_beta(self):
        p = self.spec.p
        if p == 0 or "beta" in self.fixed:
            return
        X = self.spec.X
        resid = (self.y - self.w) * self._obs_f
        prec = self.tau_e * self._XtX + self.priors.beta_precision * np.eye(p)
        c = sla.cho_factor(prec, lower=True, check_finite=False)
        mean = sla.cho_solve(c, self.tau_e * X.T @ resid, check_finite=False)
        z = self.rng.standard_normal(p)
        self.beta = mean + sla.solve_triangular(c[0], z, lower=True, trans="T", check_finite=False)

    def update_w(self):
        if "w" in self.fixed:
            return
        k = self.spec.k
        q = self.latent.dense(self.pstate)
        prec = self.tau_w * q
        prec[np.diag_indices(k)] += self.tau_e * self._obs_f
        rhs = self.tau_e * self._obs_f * (self.y - self.spec.X @ self.beta)
        z = self.rng.standard_normal(k)
        if k <= DENSE_LIMIT:
            chol = dense_cholesky(prec)
            mean = sla.cho_solve((chol, True), rhs, check_finite=False)
            self.w = mean + sla.solve_triangular(chol, z, lower=True, trans="T", check_finite=False)
        else:
            fac = sparse_cholesky(SparseSymmetric.from_matrix(prec))
            mean = fac.solve_transpose(fac.solve(rhs))
            self.w = mean + fac.solve_transpose(z)

    def update_tau_e(self):
        if "tau_e" in self.fixed:
            return
        r = (self.y - self.spec.X @ self.beta - self.w)[self.observed]
        shape, rate = tau_e_conditional(float(r @ r), self.n_obs, self.priors.tau_e_shape,
                                        self.priors.rate("tau_e"))
        self.tau_e = self.rng.gamma(shape, 1.0 / rate)

    def sweep(self):
        self.update_beta()
        self.update_w()
        self.recentre()
        self.update_tau_w()
        self.update_tau_e()
        self.update_rho()

    def loglik(self) -> float:
        return gaussian_loglik(self.y, self.spec.X @ self.beta + self.w, self.tau_e, self.observed)

    def loglik_at(self, beta, w, tau_e=None) -> float:
        return gaussian_loglik(self.y, self.spec.X @ beta + w, tau_e, self.observed)


def _poisson_glm(X, counts, log_offset, prior_precision, iters=25):
    """Posterior mode and Hessian-based covariance for a Poisson GLM without random effects."""
    p = X.shape[1]
    beta = np.zeros(p)
    if p == 0:
        return beta, np.zeros((0, 0))
    for _ in range(iters):
        mu = np.exp(np.clip(log_offset + X @ beta, -700, 700))
        grad = X.T @ (counts - mu) - prior_precision * beta
        hess = X.T @ (mu[:, None] * X) + prior_precision * np.eye(p)
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < 1e-10:
            break
    mu = np.exp(log_offset + X @ beta)
    hess = X.T @ (mu[:, None] * X) + prior_precision * np.eye(p)
    return beta, np.linalg.inv(hess)


class PoissonSampler(_Sampler):
    """Sitewise random-walk Metropolis for w, block random walk for beta,
    Gibbs for tau_w and logit random walk for rho."""

    blocks = ("w", "beta", "rho")
    has_tau_e = False

    def __init__(self, counts, spec: ModelSpec, priors: Priors, cfg: MCMCConfig, observed=None):
        if spec.link != "log":
            raise ValidationError("Poisson sampler needs the log link")
        super().__init__(spec, priors, cfg, observed)
        counts = np.asarray(counts, dtype=float)
        if counts.shape != (spec.k,):
            raise ValidationError(f"counts have shape {counts.shape}, expected ({spec.k},)")
        obs_counts = counts[self.observed]
        if np.any(~np.isfinite(obs_counts)) or np.any(obs_counts < 0) or \
                np.any(obs_counts != np.round(obs_counts)):
            raise ValidationError("counts must be non-negative integers")
        self.counts = np.where(self.observed, counts, 0.0)
        self.log_offset = np.log(spec.offsets)
        X = spec.X
        beta0, cov = _poisson_glm(X[self.observed], self.counts[self.observed],
                                  self.log_offset[self.observed], priors.beta_precision)
        self.beta = np.array(cfg.init.get("beta", beta0), dtype=float)
        p = spec.p
        self._beta_chol = (np.linalg.cholesky(cov * (2.38 ** 2 / max(p, 1))) if p
                           else np.zeros((0, 0)))
        self.beta_tuner = _RobbinsMonro(cfg.proposal_sd.get("beta", 1.0), target=0.3,
                                        enabled=cfg.adapt)
        self.w_sd = np.full(spec.k, float(cfg.proposal_sd.get("w", 0.5)))
        self._w_batch = np.zeros(spec.k)
        self._w_batch_n = 0
        self._w_batches = 0
        self._xb = X @ self.beta

    def _eta(self, beta=None, w=None):
        beta = self.beta if beta is None else beta
        w = self.w if w is None else w
        return self.log_offset + self.spec.X @ beta + w

    def update_w(self):
        if "w" in self.fixed:
            return
        k = self.spec.k
        q = self.latent.dense(self.pstate)
        qd = np.diag(q)
        tw = self.tau_w
        w = self.w
        base = self.log_offset + self._xb
        steps = self.rng.standard_normal(k) * self.w_sd
        logu = np.log(self.rng.random(k))
        counts, obs = self.counts, self.observed
        acc = np.zeros(k)
        for i in range(k):
            wi = w[i]
            new = wi + steps[i]
            s = float(q[i] @ w) - qd[i] * wi
            d = new - wi
            lr = -0.5 * tw * (qd[i] * (new * new - wi * wi) + 2.0 * d * s)
            if obs[i]:
                eta = base[i] + wi
                lr += counts[i] * d - math.exp(eta) * math.expm1(d)
            if logu[i] < lr:
                w[i] = new
                acc[i] = 1.0
        if self.burning and self.cfg.adapt:
            self._w_batch += acc
            self._w_batch_n += 1
            if self._w_batch_n == 50:
                self._w_batches += 1
                delta = min(0.05, 1.0 / math.sqrt(self._w_batches))
                rate = self._w_batch / 50.0
                self.w_sd *= np.exp(np.where(rate > TARGET_ACCEPT, delta, -delta))
                self._w_batch[:] = 0.0
                self._w_batch_n = 0
        self._tally("w", float(acc.sum()), k)

    def _beta_logpost(self, beta, xb):
        eta = (self.log_offset + xb + self.w)[self.observed]
        with np.errstate(over="ignore"):  # overflow gives -inf, i.e. a rejected proposal
            return float(np.dot(self.counts[self.observed], eta) - np.sum(np.exp(eta))
                         - 0.5 * self.priors.beta_precision * beta @ beta)

    def update_beta(self):
        p = self.spec.p
        if p == 0 or "beta" in self.fixed:
            return
        sd = float(self.beta_tuner.sd)
        prop = self.beta + sd * (self._beta_chol @ self.rng.standard_normal(p))
        xb_new = self.spec.X @ prop
        lr = self._beta_logpost(prop, xb_new) - self._beta_logpost(self.beta, self._xb)
        accepted = math.log(self.rng.random()) < lr
        if accepted:
            self.beta, self._xb = prop, xb_new
        if self.burning:
            self.beta_tuner.update(accepted)
        self._tally("beta", accepted)

    def recentre(self):
        super().recentre()
        self._xb = self.spec.X @ self.beta

    def sweep(self):
        self.update_w()
        self.update_beta()
        self.recentre()
        self.update_tau_w()
        self.update_rho()

    def loglik(self) -> float:
        return poisson_loglik(self.counts, self._eta(), self.observed)

    def loglik_at(self, beta, w, tau_e=None) -> float:
        return poisson_loglik(self.counts, self._eta(beta, w), self.observed)


def fit_gaussian(y, spec: ModelSpec, priors: Optional[Priors] = None,
                 cfg: Optional[MCMCConfig] = None, observed=None) -> ChainOutput:
    """Gibbs sampler for the identity-link model. ``observed=False`` entries carry no data."""
    return GaussianSampler(y, spec, priors or Priors(), cfg or MCMCConfig(), observed).run()


def fit_poisson(counts, spec: ModelSpec, priors: Optional[Priors] = None,
                cfg: Optional[MCMCConfig] = None, observed=None) -> ChainOutput:
    """Metropolis-within-Gibbs for counts with mean ``E_i exp(x_i' beta + w_i)``."""
    if priors is None:
        priors = Priors(beta_precision=1e-4)
    return PoissonSampler(counts, spec, priors, cfg or MCMCConfig(), observed).run()


def fit(response, spec: ModelSpec, priors=None, cfg=None, observed=None) -> ChainOutput:
    if spec.link == "identity":
        return fit_gaussian(response, spec, priors, cfg, observed)
    return fit_poisson(response, spec, priors, cfg, observed)


# ---------------------------------------------------------------------------
# summaries


def batch_means_ess(x) -> float:
    """Effective sample size from non-overlapping batch means (batch size ~ sqrt(n))."""
    x = np.asarray(x, dtype=float)
    n = x.size
    var = x.var(ddof=1) if n > 1 else 0.0
    if n < 4 or var == 0.0:
        return float(n)
    b = int(math.floor(math.sqrt(n)))
    a = n // b
    means = x[: a * b].reshape(a, b).mean(axis=1)
    sigma2 = b * means.var(ddof=1)
    if sigma2 <= 0:
        return float(n)
    return float(min(n, n * var / sigma2))


def _summ(x) -> dict:
    lo, med, hi = np.quantile(x, [0.025, 0.5, 0.975])
    return {"median": float(med), "lower": float(lo), "upper": float(hi),
            "mean": float(np.mean(x)), "ess": batch_means_ess(x)}


def posterior_summary(chain: ChainOutput) -> dict:
    """Median, equal-tailed 95% interval (type-7 quantiles) and ESS per parameter."""
    if chain.n_draws == 0:
        raise ValidationError("cannot summarise an empty chain")
    params = {name: _summ(v) for name, v in chain.scalar_columns().items() if name != "loglik"}
    w = [_summ(chain.w[:, i]) for i in range(chain.w.shape[1])]
    return {"kind": chain.kind, "link": chain.link, "draws": chain.n_draws,
            "parameters": params, "w": w, "acceptance": chain.acceptance}

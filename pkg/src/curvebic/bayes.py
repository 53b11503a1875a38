"""Laplace marginal likelihoods, log Bayes factors and lpd-based estimates.

Everything is kept in log space; exponentiate only for presentation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .curvature import HessianConfig, numerical_gradient, numerical_hessian
from .errors import (NonConvergence, NonFinitePointwiseLikelihood, NotPositiveDefinite,
                     PreconditionError, SaddlePoint, StuckChain)
from .optimize import newton_polish, simplex_maximize

_LOG2PI = math.log(2.0 * math.pi)
TARGET_ACCEPTANCE = 0.234


@dataclass(frozen=True)
class BayesModel:
    """Likelihood factorized over observations plus a proper prior.

    ``pointwise_loglik(theta, data)`` returns the vector of
    log f(y_i | theta); ``log_prior(theta)`` is log g(theta).
    """

    pointwise_loglik: Callable[[np.ndarray, object], np.ndarray]
    log_prior: Callable[[np.ndarray], float]
    dim: int
    prior_name: str = "custom"
    param_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.dim < 1:
            raise PreconditionError("a Bayesian model needs at least one parameter")

    def log_likelihood(self, theta, data) -> float:
        return float(np.sum(self.pointwise_loglik(np.asarray(theta, float), data)))

    def log_posterior(self, theta, data) -> float:
        """Unnormalized: log f(y | theta) + log g(theta)."""
        theta = np.asarray(theta, float)
        lp = float(self.log_prior(theta))
        if not math.isfinite(lp):
            return -math.inf
        ll = self.log_likelihood(theta, data)
        return ll + lp if math.isfinite(ll) else -math.inf


@dataclass(frozen=True)
class PosteriorDraws:
    draws: np.ndarray
    acceptance_rate: float
    seed: int | None
    burn_in: int
    param_names: tuple[str, ...] = ()

    def __post_init__(self):
        d = np.array(self.draws, dtype=float)
        if d.ndim == 1:
            d = d[:, None]
        if d.shape[0] < 1:
            raise PreconditionError("at least one draw is required")
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)

    @property
    def S(self) -> int:
        return self.draws.shape[0]

    def to_csv(self, path_or_file):
        names = list(self.param_names) or [f"theta{j}" for j in range(self.draws.shape[1])]
        own = not hasattr(path_or_file, "write")
        fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for row in self.draws:
                w.writerow([repr(float(v)) for v in row])
        finally:
            if own:
                fh.close()


@dataclass(frozen=True)
class LogBayesFactor:
    """log BF_{0,1} together with its additive components."""

    value: float
    components: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


# -- posterior mode and Laplace marginal ------------------------------------

def posterior_mode(model: BayesModel, data, init=None, gtol: float = 1e-6):
    """Maximize log f + log g; returns (theta_tilde, P) with P = -Hessian there."""
    x0 = np.zeros(model.dim) if init is None else np.asarray(init, float)
    if x0.size != model.dim:
        raise PreconditionError("init has the wrong dimension")

    def fn(th):
        return model.log_posterior(th, data)

    opt = simplex_maximize(fn, x0)
    pol = newton_polish(fn, opt.x, gtol=gtol)
    theta = pol.x
    g = numerical_gradient(fn, theta)
    if not np.linalg.norm(g) < gtol:
        raise NonConvergence(opt.iterations + pol.iterations, pol.value,
                             f"gradient norm {np.linalg.norm(g):.3g} at the posterior mode")
    P = -numerical_hessian(fn, theta, HessianConfig(step_rule="richardson"))
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise SaddlePoint("curvature at the stationary point is not negative definite") from None
    return theta, P


def _logdet_pd(P) -> float:
    P = np.asarray(P, dtype=float)
    try:
        L = np.linalg.cholesky(0.5 * (P + P.T))
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(float(np.linalg.eigvalsh(0.5 * (P + P.T))[0])) from None
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def laplace_marginal(model: BayesModel, data, theta_tilde, P, log: bool = True) -> float:
    """f(y|t) g(t) (2 pi)^(d/2) / det(P)^(1/2), returned as a log unless ``log=False``."""
    theta = np.asarray(theta_tilde, float)
    P = np.atleast_2d(np.asarray(P, float))
    if P.shape != (model.dim, model.dim):
        raise PreconditionError("P must be dim x dim")
    val = (model.log_likelihood(theta, data) + float(model.log_prior(theta))
           + 0.5 * model.dim * _LOG2PI - 0.5 * _logdet_pd(P))
    return val if log else math.exp(val)


def log_bf_laplace(model0: BayesModel, model1: BayesModel, data, init0=None, init1=None,
                   modes=None) -> LogBayesFactor:
    """log BF_{0,1} from two Laplace approximations.

    ``modes`` may pass precomputed ((theta0, P0), (theta1, P1)).
    """
    if modes is None:
        modes = (posterior_mode(model0, data, init0), posterior_mode(model1, data, init1))
    (t0, P0), (t1, P1) = modes
    h0 = model0.log_likelihood(t0, data) + float(model0.log_prior(t0))
    h1 = model1.log_likelihood(t1, data) + float(model1.log_prior(t1))
    comp = {
        "log_height_ratio": h0 - h1,
        "dim_term": 0.5 * _LOG2PI * (model0.dim - model1.dim),
        "curvature_term": 0.5 * (_logdet_pd(P1) - _logdet_pd(P0)),
    }
    return LogBayesFactor(sum(comp.values()), comp)


# -- sampling -----------------------------------------------------------------

def metropolis_sample(model: BayesModel, data, init, S: int, seed: int,
                      proposal_cov=None) -> PosteriorDraws:
    """Random-walk Metropolis with Gaussian proposals.

    2*S iterations run in total. During the first 20% the proposal scale
    is tuned towards acceptance 0.234 (Robbins-Monro on log scale) and the
    proposal covariance tracks the chain's empirical covariance; the
    kernel is then frozen. The first S iterations are discarded and the
    last S kept.
    """
    if S < 100:
        raise PreconditionError("S must be at least 100")
    x = np.array(init, dtype=float).reshape(-1)
    d = model.dim
    if x.size != d:
        raise PreconditionError("init has the wrong dimension")
    lp = model.log_posterior(x, data)
    if not math.isfinite(lp):
        raise PreconditionError("log posterior is not finite at init")
    rng = np.random.default_rng(seed)
    total = 2 * S
    n_adapt = int(0.2 * total)
    cov = np.eye(d) if proposal_cov is None else np.atleast_2d(np.asarray(proposal_cov, float))
    chol = np.linalg.cholesky(cov)
    log_scale = math.log(2.38 / math.sqrt(d))
    mean = x.copy()
    m2 = np.zeros((d, d))
    out = np.empty((S, d))
    accepted = 0
    for t in range(total):
        z = rng.standard_normal(d)
        prop = x + math.exp(log_scale) * (chol @ z)
        lp_prop = model.log_posterior(prop, data)
        log_u = math.log(rng.random())
        alpha = math.exp(min(0.0, lp_prop - lp)) if math.isfinite(lp_prop) else 0.0
        if math.isfinite(lp_prop) and log_u < lp_prop - lp:
            x, lp = prop, lp_prop
            if t >= n_adapt:
                accepted += 1
        if t < n_adapt:
            log_scale += (alpha - TARGET_ACCEPTANCE) / (t + 1) ** 0.6
            # Welford update of the chain covariance
            delta = x - mean
            mean += delta / (t + 2)
            m2 += np.outer(delta, x - mean)
            if t >= 200 and (t + 1) % 100 == 0:
                emp = m2 / (t + 1) + 1e-10 * np.eye(d)
                try:
                    chol = np.linalg.cholesky(emp)
                except np.linalg.LinAlgError:
                    pass
        if t >= total - S:
            out[t - (total - S)] = x
    rate = accepted / (total - n_adapt)
    if rate < 0.01:
        raise StuckChain(rate)
    return PosteriorDraws(out, rate, seed, total - S, model.param_names)


# -- lpd estimators -----------------------------------------------------------

def _draw_matrix(draws) -> np.ndarray:
    return draws.draws if isinstance(draws, PosteriorDraws) else np.atleast_2d(draws)


def pointwise_matrix(draws, pointwise_loglik: Callable[[np.ndarray], np.ndarray],
                     n: int | None = None) -> np.ndarray:
    D = _draw_matrix(draws)
    M = np.array([np.asarray(pointwise_loglik(th), dtype=float) for th in D])
    if n is not None and M.shape[1] != n:
        raise PreconditionError(f"expected {n} pointwise terms, got {M.shape[1]}")
    bad = np.argwhere(~np.isfinite(M))
    if bad.size:
        j, i = bad[0]
        raise NonFinitePointwiseLikelihood(int(i), int(j))
    return M


def lpd_hat(draws, pointwise_loglik: Callable[[np.ndarray], np.ndarray],
            n: int | None = None) -> float:
    """sum_i log( mean_j P(y_i | theta_j) ); ``pointwise_loglik(theta)``
    returns the n values log P(y_i | theta)."""
    M = pointwise_matrix(draws, pointwise_loglik, n)
    S = M.shape[0]
    return float(np.sum(logsumexp(M, axis=0) - math.log(S)))


def _log_mean_prior(model: BayesModel, draws) -> float:
    lg = np.array([float(model.log_prior(th)) for th in _draw_matrix(draws)])
    return float(logsumexp(lg) - math.log(lg.size))


def estimated_log_bf(model0: BayesModel, model1: BayesModel, data, draws0, draws1,
                     modes=None, include_prior_term: bool = True) -> LogBayesFactor:
    """Draw-based log BF_{0,1}:

    lpd0 - lpd1 + n log(mean g0 / mean g1) + dim term + curvature term.

    The prior term is reported separately and can be switched off with
    ``include_prior_term=False``.
    """
    if modes is None:
        m0 = np.mean(_draw_matrix(draws0), axis=0)
        m1 = np.mean(_draw_matrix(draws1), axis=0)
        modes = (posterior_mode(model0, data, m0), posterior_mode(model1, data, m1))
    (_, P0), (_, P1) = modes
    lpd0 = lpd_hat(draws0, lambda th: model0.pointwise_loglik(th, data))
    lpd1 = lpd_hat(draws1, lambda th: model1.pointwise_loglik(th, data))
    n = np.asarray(model0.pointwise_loglik(_draw_matrix(draws0)[0], data)).size
    prior_term = n * (_log_mean_prior(model0, draws0) - _log_mean_prior(model1, draws1))
    comp = {
        "lpd0": lpd0,
        "lpd1": lpd1,
        "prior_term": prior_term,
        "dim_term": 0.5 * _LOG2PI * (model0.dim - model1.dim),
        "curvature_term": 0.5 * (_logdet_pd(P1) - _logdet_pd(P0)),
    }
    value = lpd0 - lpd1 + comp["dim_term"] + comp["curvature_term"]
    if include_prior_term:
        value += prior_term
    return LogBayesFactor(value, comp)


# -- ready-made models --------------------------------------------------------

def _normal_logpdf(x, mean, var):
    return -0.5 * (_LOG2PI + np.log(var) + (x - mean) ** 2 / var)


def normal_mean_model(sigma2: float, prior_mean: float = 0.0, prior_var: float = 1.0) -> BayesModel:
    """y_i ~ N(theta, sigma2) with theta ~ N(prior_mean, prior_var); data is the y vector."""

    def pointwise(theta, y):
        return _normal_logpdf(np.asarray(y, float), theta[0], sigma2)

    def log_prior(theta):
        return float(_normal_logpdf(theta[0], prior_mean, prior_var))

    return BayesModel(pointwise, log_prior, 1, f"normal({prior_mean}, {prior_var})", ("theta",))


def gaussian_linear_model(X, param_names: Sequence[str], prior_mean: float = 0.0,
                          prior_sd: float = 10.0, sigma2: float | None = None,
                          log_sigma2_mean: float = 0.0, log_sigma2_sd: float = 2.0) -> BayesModel:
    """Bayesian linear regression; data is the response vector.

    Coefficients get iid Normal(prior_mean, prior_sd**2) priors. With
    ``sigma2`` given the noise variance is known; otherwise log sigma2 is
    the last parameter with a Normal(log_sigma2_mean, log_sigma2_sd**2) prior.
    """
    X = np.asarray(X, float)
    k = X.shape[1]
    known = sigma2 is not None

    def pointwise(theta, y):
        s2 = sigma2 if known else math.exp(min(theta[k], 700.0))
        return _normal_logpdf(np.asarray(y, float), X @ theta[:k], s2)

    def log_prior(theta):
        lp = float(np.sum(_normal_logpdf(theta[:k], prior_mean, prior_sd ** 2)))
        if not known:
            lp += float(_normal_logpdf(theta[k], log_sigma2_mean, log_sigma2_sd ** 2))
        return lp

    names = tuple(param_names) + (() if known else ("log_sigma2",))
    return BayesModel(pointwise, log_prior, k + (0 if known else 1),
                      f"normal(0, {prior_sd}^2)", names)

"""Maximum-likelihood fitters for the linear, balanced normal-means,
linear mixed and binomial/Poisson mixed families.

Every fitter returns a :class:`~curvebic.core.FitResult` subclass whose
``loglik_fn`` evaluates the log-likelihood in the reported (variance-scale)
parameterization, so the curvature module can differentiate it directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import gammaln

from . import kernels
from .core import Dataset, Family, FitResult, GroupedDataset, ModelSpec
from .errors import (CompleteSeparation, DegenerateFit, NonConvergence,
                     PreconditionError, RankDeficientDesign, SingularMarginalCovariance,
                     UnbalancedGroups)
from .optimize import SIMPLEX_EDGE, MAX_ITER, simplex_maximize

VAR_LOWER = 1e-10
SIGMA2_MIN = 1e-12
SIGMA2_COLLAPSE = 1e-8  # residual variance below this share of var(y) is degenerate
RANK_TOL = 1e-10
_LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, kw_only=True)
class LinearFit(FitResult):
    beta_hat: np.ndarray
    sigma2_hat: float


@dataclass(frozen=True, kw_only=True)
class HierarchicalFit(FitResult):
    mu_hat: np.ndarray
    sigma2_hat: float
    r_per_group: int


@dataclass(frozen=True, kw_only=True)
class MixedFit(FitResult):
    beta_hat: np.ndarray
    var_components: np.ndarray
    sigma2_eps: float
    at_bound: tuple[bool, ...] = ()


@dataclass(frozen=True, kw_only=True)
class GlmmFit(FitResult):
    beta_hat: np.ndarray
    var_components: np.ndarray
    quadrature_points: int
    correlated: bool = False


def _base(data) -> Dataset:
    return data.base if isinstance(data, GroupedDataset) else data


def _fixed_names(spec: ModelSpec) -> list[str]:
    names = ["(Intercept)"] if spec.intercept_fixed else []
    return names + list(spec.fixed_columns)


def _random_names(spec: ModelSpec) -> list[str]:
    names = ["(Intercept)"] if spec.intercept_random else []
    return names + list(spec.random_columns)


def _check_rank(X):
    n, k = X.shape
    if k == 0:
        return
    if n < k:
        raise RankDeficientDesign(f"{k} columns but only {n} rows")
    s = np.linalg.svd(X, compute_uv=False)
    if s[-1] <= RANK_TOL * s[0]:
        raise RankDeficientDesign("design columns are linearly dependent")


# -- linear -----------------------------------------------------------------

def gaussian_loglik(y, X, beta, sigma2) -> float:
    if not sigma2 > 0:
        return -math.inf
    r = y - X @ beta
    n = y.size
    return -0.5 * n * (_LOG2PI + math.log(sigma2)) - 0.5 * float(r @ r) / sigma2


def fit_linear(data, spec: ModelSpec, n_eff: float | None = None) -> LinearFit:
    """Gaussian linear regression by least squares; sigma2 uses divisor n."""
    base = _base(data)
    X = base.design(spec.fixed_columns, spec.intercept_fixed)
    y = base.y
    n, k = X.shape
    _check_rank(X)
    if k:
        Q, R = np.linalg.qr(X)
        beta = np.linalg.solve(R, Q.T @ y)
    else:
        beta = np.empty(0)
    r = y - X @ beta
    sigma2 = float(r @ r) / n
    if sigma2 < SIGMA2_MIN:
        raise DegenerateFit(f"residual variance {sigma2:.3g} is numerically zero")
    loglik = -0.5 * n * (_LOG2PI + math.log(sigma2)) - 0.5 * n

    def loglik_fn(theta, y=y, X=X, k=k):
        return gaussian_loglik(y, X, theta[:k], theta[k])

    return LinearFit(theta_hat=np.r_[beta, sigma2], loglik=loglik,
                     n_eff=n if n_eff is None else n_eff, converged=True, iterations=1,
                     family=Family.LINEAR, param_names=(*_fixed_names(spec), "sigma2"),
                     loglik_fn=loglik_fn, beta_hat=beta, sigma2_hat=sigma2)


# -- balanced normal means ---------------------------------------------------

def fit_hierarchical_normal(data: GroupedDataset, n_eff: float | None = None) -> HierarchicalFit:
    """X_il = mu_i + eps_il with p groups of r observations each."""
    sizes = data.group_sizes
    if np.any(sizes != sizes[0]):
        raise UnbalancedGroups(f"group sizes differ: {sorted(set(sizes.tolist()))}")
    p, r = data.p_groups, int(sizes[0])
    y, g = data.y, data.group
    mu = np.bincount(g, y, minlength=p) / r
    ss = float(np.sum((y - mu[g]) ** 2))
    sigma2 = ss / (p * r)
    if sigma2 < SIGMA2_MIN:
        raise DegenerateFit("within-group variance is numerically zero")
    npr = p * r
    loglik = -0.5 * npr * _LOG2PI - 0.5 * npr * math.log(sigma2) - 0.5 * npr

    def loglik_fn(theta, y=y, g=g, p=p):
        s2 = theta[p]
        if not s2 > 0:
            return -math.inf
        res = y - theta[:p][g]
        return -0.5 * y.size * (_LOG2PI + math.log(s2)) - 0.5 * float(res @ res) / s2

    names = tuple(f"mu[{lab}]" for lab in data.labels) + ("sigma2",)
    return HierarchicalFit(theta_hat=np.r_[mu, sigma2], loglik=loglik,
                           n_eff=data.n if n_eff is None else n_eff, converged=True,
                           iterations=1, family=Family.HIERARCHICAL_NORMAL,
                           param_names=names, loglik_fn=loglik_fn, mu_hat=mu,
                           sigma2_hat=sigma2, r_per_group=r)


# -- linear mixed model ----------------------------------------------------

class _GroupCross:
    """Per-group cross products for V_i = Z_i D Z_i' + s2 I with diagonal D.

    Uses V^-1 = (I - Z (s2 I + D Z'Z)^-1 D Z') / s2, which stays valid for
    slightly negative D entries (needed by the Hessian stencil at a bound).
    """

    def __init__(self, y, X, Z, group, p_groups):
        order = np.argsort(group, kind="stable")
        y, X, Z, group = y[order], X[order], Z[order], group[order]
        self.n, self.k = X.shape
        self.q = Z.shape[1]
        g = p_groups
        self.ni = np.bincount(group, minlength=g).astype(float)
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.yty = float(y @ y)
        self.ZtZ = np.zeros((g, self.q, self.q))
        self.ZtX = np.zeros((g, self.q, self.k))
        self.Zty = np.zeros((g, self.q))
        np.add.at(self.ZtZ, group, Z[:, :, None] * Z[:, None, :])
        np.add.at(self.ZtX, group, Z[:, :, None] * X[:, None, :])
        np.add.at(self.Zty, group, Z * y[:, None])
        self.eye = np.eye(self.q)
        self.y, self.X, self.Z, self.gid, self.g = y, X, Z, group, g

    def quadratic_forms(self, d, s2):
        """Return X'V^-1X, X'V^-1y, y'V^-1y and log|V|, or None if V is not PD."""
        A = s2 * self.eye + d[None, :, None] * self.ZtZ
        rhs = np.concatenate([d[None, :, None] * self.ZtX,
                              (d[None, :] * self.Zty)[:, :, None]], axis=2)
        sign, logdetA = np.linalg.slogdet(A)
        if np.any(sign <= 0):
            return None
        try:
            sol = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            return None
        solX, soly = sol[:, :, :self.k], sol[:, :, self.k]
        XtViX = (self.XtX - np.einsum("gqa,gqb->ab", self.ZtX, solX)) / s2
        XtViy = (self.Xty - np.einsum("gqa,gq->a", self.ZtX, soly)) / s2
        ytViy = (self.yty - np.einsum("gq,gq->", self.Zty, soly)) / s2
        logdetV = float(np.sum((self.ni - self.q) * math.log(s2) + logdetA))
        return XtViX, XtViy, ytViy, logdetV

    def loglik(self, beta, d, s2) -> float:
        # residual form: differencing this in the Hessian stencil must not
        # lose digits to the y'y - ... cancellation of the cross products
        if not s2 > 0:
            return -math.inf
        A = s2 * self.eye + d[None, :, None] * self.ZtZ
        sign, logdetA = np.linalg.slogdet(A)
        if np.any(sign <= 0):
            return -math.inf
        r = self.y - self.X @ beta
        Ztr = np.column_stack([np.bincount(self.gid, self.Z[:, a] * r, minlength=self.g)
                               for a in range(self.q)])
        sol = np.linalg.solve(A, (d[None, :] * Ztr)[:, :, None])[:, :, 0]
        quad = (float(r @ r) - float(np.sum(Ztr * sol))) / s2
        if not quad > 0:
            return -math.inf
        logdetV = float(np.sum((self.ni - self.q) * math.log(s2) + logdetA))
        return -0.5 * (self.n * _LOG2PI + logdetV + quad)

    def profile(self, t):
        """GLS beta and ML sigma2 for relative variances t = D / s2."""
        forms = self.quadratic_forms(t, 1.0)
        if forms is None:
            return None
        XtViX, XtViy, ytViy, logdetVt = forms
        try:
            beta = np.linalg.solve(XtViX, XtViy) if self.k else np.empty(0)
        except np.linalg.LinAlgError:
            return None
        Q = ytViy - beta @ XtViy
        if not Q > 0:
            return None
        s2 = Q / self.n
        ll = -0.5 * (self.n * (_LOG2PI + math.log(s2) + 1.0) + logdetVt)
        return ll, beta, s2


def fit_lmm(data: GroupedDataset, spec: ModelSpec, n_eff: float | None = None,
            max_iter: int = MAX_ITER) -> MixedFit:
    """Marginal ML fit with independent random effects.

    beta and the residual variance are profiled out analytically; the
    relative variances D / sigma2 are searched on the log scale by
    restarted Nelder-Mead.
    """
    if not isinstance(data, GroupedDataset):
        raise PreconditionError("fit_lmm needs a grouped dataset")
    X = data.design(spec.fixed_columns, spec.intercept_fixed)
    Z = data.design(spec.random_columns, spec.intercept_random)
    y = data.y
    _check_rank(X)
    fixed, rand = _fixed_names(spec), _random_names(spec)
    names = (*fixed, *(f"var[{c}]" for c in rand), "sigma2")
    n = y.size
    n_eff = n if n_eff is None else n_eff
    if Z.shape[1] == 0:
        lin = fit_linear(data, spec)
        return MixedFit(theta_hat=lin.theta_hat, loglik=lin.loglik, n_eff=n_eff,
                        converged=True, iterations=1, family=Family.LMM,
                        param_names=names, loglik_fn=lin.loglik_fn,
                        beta_hat=lin.beta_hat, var_components=np.empty(0),
                        sigma2_eps=lin.sigma2_hat)
    if data.p_groups < 2:
        raise PreconditionError("a mixed model needs at least two groups")
    cross = _GroupCross(y, X, Z, data.group, data.p_groups)
    k, q = X.shape[1], Z.shape[1]

    def objective(x):
        res = cross.profile(np.exp(np.clip(x, -30.0, 30.0)))
        return -math.inf if res is None else res[0]

    opt = simplex_maximize(objective, np.zeros(q), edge=SIMPLEX_EDGE, max_iter=max_iter)
    prof = cross.profile(np.exp(np.clip(opt.x, -30.0, 30.0)))
    if prof is None:
        raise SingularMarginalCovariance("marginal covariance is singular at the optimum")
    ll, beta, s2 = prof
    if s2 < SIGMA2_COLLAPSE * max(float(np.var(y)), SIGMA2_MIN):
        raise DegenerateFit("residual variance collapsed to zero")
    if not opt.converged:
        raise NonConvergence(opt.iterations, opt.value)
    t = np.exp(np.clip(opt.x, -30.0, 30.0))
    # a component the likelihood does not depend on is moved onto the bound
    tol = 1e-8 * max(1.0, abs(ll))
    at_bound = t * s2 <= VAR_LOWER
    for j in np.argsort(t):
        trial = t.copy()
        trial[j] = VAR_LOWER / s2
        res = cross.profile(trial)
        if res is not None and res[0] >= ll - tol:
            t, (ll, beta, s2) = trial, res
            at_bound[j] = True
    d = np.where(at_bound, VAR_LOWER, t * s2)
    theta = np.r_[beta, d, s2]

    def loglik_fn(th, cross=cross, k=k, q=q):
        return cross.loglik(th[:k], th[k:k + q], th[k + q])

    loglik = loglik_fn(theta)
    if at_bound.any():
        _check_bound_gradient(loglik_fn, theta, k, at_bound, s2)
    return MixedFit(theta_hat=theta, loglik=loglik, n_eff=n_eff, converged=True,
                    iterations=opt.iterations, family=Family.LMM, param_names=names,
                    loglik_fn=loglik_fn, beta_hat=beta, var_components=d, sigma2_eps=s2,
                    at_bound=tuple(bool(b) for b in at_bound))


def _check_bound_gradient(loglik_fn, theta, offset, at_bound, scale):
    """A pinned variance is only acceptable when moving off the bound does not
    increase the likelihood; otherwise the optimizer stalled at the bound."""
    f0 = loglik_fn(theta)
    h = 1e-6 * max(1.0, scale)
    for j in np.flatnonzero(at_bound):
        th = theta.copy()
        th[offset + j] += h
        slope = (loglik_fn(th) - f0) / h
        if slope > 1e-3 * max(1.0, abs(f0)):
            raise DegenerateFit(f"variance component {j} pinned at the lower bound "
                                f"with increasing likelihood (slope {slope:.3g})")


# -- generalized linear (mixed) models --------------------------------------

def _glm_kernel(family: Family):
    if family is Family.GLMM_BINOMIAL:
        return kernels.BINOMIAL
    if family is Family.GLMM_POISSON:
        return kernels.POISSON
    raise PreconditionError(f"{family.value} is not a GLMM family")


def glm_loglik(y, eta, code) -> float:
    if code == kernels.BINOMIAL:
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))


def fit_glm(X, y, family: Family, intercept: bool = True, max_iter: int = 100):
    """Fixed-effects GLM by Newton's method; returns (beta, loglik).

    Binomial data whose fitted probabilities all collapse onto 0/1 raise
    :class:`CompleteSeparation`.
    """
    code = _glm_kernel(family)
    X = np.asarray(X, float)
    beta = np.zeros(X.shape[1])
    if code == kernels.POISSON and intercept and X.shape[1]:
        beta[0] = math.log(max(float(np.mean(y)), 1e-8))
    ll = glm_loglik(y, X @ beta, code)
    for _ in range(max_iter):
        eta = X @ beta
        if code == kernels.BINOMIAL:
            mu = 0.5 * (1.0 + np.tanh(0.5 * eta))
            if np.all((mu < 1e-8) | (mu > 1.0 - 1e-8)):
                raise CompleteSeparation("fitted probabilities are all 0 or 1")
            v = mu * (1.0 - mu)
        else:
            mu = np.exp(eta)
            v = mu
        grad = X.T @ (y - mu)
        H = (X * v[:, None]).T @ X
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise CompleteSeparation("information matrix of the GLM is singular") from None
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            llc = glm_loglik(y, X @ cand, code)
            if math.isfinite(llc) and llc >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        beta, ll = cand, llc
        if np.max(np.abs(t * step)) < 1e-10 * (1.0 + np.max(np.abs(beta))):
            break
    if code == kernels.BINOMIAL:
        mu = 0.5 * (1.0 + np.tanh(0.5 * (X @ beta)))
        if np.all((mu < 1e-8) | (mu > 1.0 - 1e-8)):
            raise CompleteSeparation("fitted probabilities are all 0 or 1")
    return beta, ll


class _GlmmProblem:
    def __init__(self, data: GroupedDataset, spec: ModelSpec, family: Family, nAGQ: int,
                 backend: str | None):
        order = np.argsort(data.group, kind="stable")
        self.X = data.design(spec.fixed_columns, spec.intercept_fixed)[order]
        self.Z = np.ascontiguousarray(
            data.design(spec.random_columns, spec.intercept_random)[order])
        self.y = np.ascontiguousarray(data.y[order])
        sizes = data.group_sizes
        self.starts = np.r_[0, np.cumsum(sizes)].astype(np.int64)
        self.code = _glm_kernel(family)
        x, w = hermgauss(nAGQ)
        self.nodes, self.logw = x, np.log(w)
        self.q = self.Z.shape[1]
        self.k = self.X.shape[1]
        self.g = data.p_groups
        self.correlated = spec.correlated_random
        self.modes = np.zeros((self.g, self.q))
        self.backend = backend

    def contributions(self, beta, L):
        w = np.ascontiguousarray(self.Z @ L)
        eta = np.ascontiguousarray(self.X @ beta)
        modes = self.modes.copy()
        out = kernels.agq_loglik(eta, self.y, w, self.starts, self.code, self.nodes,
                                 self.logw, modes, backend=self.backend)
        self.modes = modes
        return out

    def loglik(self, beta, L) -> float:
        try:
            out = self.contributions(beta, L)
        except kernels.InnerModeFailure:
            return -math.inf
        total = float(np.sum(out))
        return total if math.isfinite(total) else -math.inf

    # unconstrained chol parameters <-> L
    def chol_from_x(self, x):
        if self.correlated:
            a, c, b = np.clip(x[0], -11.6, 10.0), x[1], np.clip(x[2], -11.6, 10.0)
            return np.array([[math.exp(a), 0.0], [c, math.exp(b)]])
        return np.diag(np.exp(np.clip(x, -11.6, 10.0)))

    def n_chol(self):
        return 3 if self.correlated else self.q

    def var_from_L(self, L):
        G = L @ L.T
        if self.correlated:
            return np.array([G[0, 0], G[1, 1], G[0, 1]])
        return np.diag(G).copy()

    def L_from_var(self, v):
        if self.correlated:
            G = np.array([[v[0], v[2]], [v[2], v[1]]])
        else:
            G = np.diag(v)
        try:
            return np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            return None


def fit_glmm(data: GroupedDataset, spec: ModelSpec, family: Family | None = None,
             nAGQ: int = 7, n_eff: float | None = None, max_iter: int = MAX_ITER,
             backend: str | None = None) -> GlmmFit:
    """Binomial (0/1) or Poisson mixed model by adaptive Gauss-Hermite quadrature.

    Random effects: intercept and/or one slope (q <= 2), diagonal or, with
    ``spec.correlated_random``, an unstructured 2x2 covariance. Variance
    parameters are reported as (var_0, var_1[, cov_01]).
    """
    family = Family(family) if family is not None else spec.family
    if not isinstance(data, GroupedDataset):
        raise PreconditionError("fit_glmm needs a grouped dataset")
    if nAGQ < 5:
        raise PreconditionError("nAGQ must be at least 5")
    q = spec.n_random
    if not 1 <= q <= 2:
        raise PreconditionError("GLMM random effects are limited to intercept plus one slope")
    if data.p_groups < 2:
        raise PreconditionError("a mixed model needs at least two groups")
    y = data.y
    if family is Family.GLMM_BINOMIAL and not np.all((y == 0) | (y == 1)):
        raise PreconditionError("binomial responses must be 0/1")
    if family is Family.GLMM_POISSON and not np.all((y >= 0) & (y == np.round(y))):
        raise PreconditionError("Poisson responses must be non-negative integers")
    prob = _GlmmProblem(data, spec, family, nAGQ, backend)
    _check_rank(prob.X)
    beta0, _ = fit_glm(prob.X, prob.y, family, intercept=spec.intercept_fixed)
    k = prob.k
    x0 = np.r_[beta0, np.full(prob.q, math.log(0.5))]
    if prob.correlated:
        x0 = np.r_[beta0, math.log(0.5), 0.0, math.log(0.5)]

    def objective(x):
        return prob.loglik(x[:k], prob.chol_from_x(x[k:]))

    opt = simplex_maximize(objective, x0, edge=SIMPLEX_EDGE, max_iter=max_iter)
    if not opt.converged:
        raise NonConvergence(opt.iterations, opt.value)
    beta = opt.x[:k]
    L = prob.chol_from_x(opt.x[k:])
    var = prob.var_from_L(L)
    contrib = prob.contributions(beta, L)
    if not np.all(np.isfinite(contrib)):
        raise SingularMarginalCovariance("non-finite group contribution at the optimum")
    if family is Family.GLMM_BINOMIAL:
        lin = prob.X @ beta + np.sum((prob.Z @ L) * np.repeat(prob.modes, np.diff(prob.starts), axis=0), axis=1)
        mu = 0.5 * (1.0 + np.tanh(0.5 * lin))
        if np.all((mu < 1e-8) | (mu > 1.0 - 1e-8)):
            raise CompleteSeparation("fitted probabilities are all 0 or 1")

    def loglik_fn(th, prob=prob, k=k):
        Lt = prob.L_from_var(th[k:])
        if Lt is None:
            return -math.inf
        return prob.loglik(th[:k], Lt)

    rand = _random_names(spec)
    vnames = [f"var[{c}]" for c in rand]
    if prob.correlated:
        vnames.append(f"cov[{rand[0]},{rand[1]}]")
    theta = np.r_[beta, var]
    return GlmmFit(theta_hat=theta, loglik=float(np.sum(contrib)),
                   n_eff=data.n if n_eff is None else n_eff, converged=True,
                   iterations=opt.iterations, family=family,
                   param_names=(*_fixed_names(spec), *vnames), loglik_fn=loglik_fn,
                   beta_hat=beta, var_components=var, quadrature_points=nAGQ,
                   correlated=prob.correlated)


def fit(data, spec: ModelSpec, **kw) -> FitResult:
    """Dispatch on ``spec.family``."""
    fam = spec.family
    if fam is Family.LINEAR:
        return fit_linear(data, spec, **kw)
    if fam is Family.HIERARCHICAL_NORMAL:
        return fit_hierarchical_normal(data, **kw)
    if fam is Family.LMM:
        return fit_lmm(data, spec, **kw)
    return fit_glmm(data, spec, **kw)

import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import gammaln
from scipy.stats import multivariate_normal

from curvebic.core import Dataset, Family, GroupedDataset, ModelSpec
from curvebic.errors import (CompleteSeparation, DegenerateFit, PreconditionError,
                             RankDeficientDesign, UnbalancedGroups)
from curvebic.fitters import (VAR_LOWER, fit, fit_glm, fit_glmm, fit_hierarchical_normal,
                              fit_linear, fit_lmm)

from conftest import glmm_data, hierarchical_data, lmm_data

LMM_INT = ModelSpec(Family.LMM, ("x",), (), intercept_random=True)


def _grouped(y, g, X=None, names=()):
    y = np.asarray(y, float)
    X = np.empty((y.size, 0)) if X is None else X
    return GroupedDataset(Dataset(y, X, names), np.asarray(g),
                          tuple(f"g{i}" for i in range(int(np.max(g)) + 1)))


# -- linear -----------------------------------------------------------------

def test_intercept_only():
    f = fit_linear(Dataset([1.0, 2, 3, 4], np.empty((4, 0)), ()), ModelSpec(Family.LINEAR))
    assert f.beta_hat == pytest.approx([2.5])
    assert f.sigma2_hat == pytest.approx(1.25)
    n = 4
    assert f.loglik == pytest.approx(-n / 2 * math.log(2 * math.pi) - n / 2 * math.log(1.25) - n / 2)


def test_linear_matches_lstsq(rng):
    X = rng.normal(size=(30, 3))
    y = X @ [1, -2, 0.5] + 3 + rng.normal(size=30)
    f = fit_linear(Dataset(y, X, ("a", "b", "c")), ModelSpec(Family.LINEAR, ("a", "b", "c")))
    D = np.column_stack([np.ones(30), X])
    beta, *_ = np.linalg.lstsq(D, y, rcond=None)
    np.testing.assert_allclose(f.beta_hat, beta, rtol=1e-10)
    resid = y - D @ f.beta_hat
    assert f.sigma2_hat == pytest.approx(resid @ resid / 30, rel=1e-12)
    assert np.max(np.abs(D.T @ resid)) <= 1e-8 * np.max(np.abs(D.T @ y))
    assert f.param_names == ("(Intercept)", "a", "b", "c", "sigma2")
    assert f.p_params == 5


def test_linear_perfect_fit_is_degenerate():
    x = np.arange(5.0)
    with pytest.raises(DegenerateFit):
        fit_linear(Dataset(2 * x + 1, x[:, None], ("x",)), ModelSpec(Family.LINEAR, ("x",)))
    with pytest.raises(DegenerateFit):
        fit_linear(Dataset([1.0, 3.0], [[0.0], [1.0]], ("x",)), ModelSpec(Family.LINEAR, ("x",)))


def test_linear_rank_deficient(rng):
    x = rng.normal(size=10)
    data = Dataset(rng.normal(size=10), np.column_stack([x, 2 * x]), ("a", "b"))
    with pytest.raises(RankDeficientDesign):
        fit_linear(data, ModelSpec(Family.LINEAR, ("a", "b")))


def test_linear_local_maximum(rng):
    X = rng.normal(size=(25, 2))
    y = X @ [1, 1] + rng.normal(size=25)
    f = fit_linear(Dataset(y, X, ("a", "b")), ModelSpec(Family.LINEAR, ("a", "b")))
    _assert_local_max(f, rng)


def _assert_local_max(f, rng, trials=100, radius=1e-3):
    for _ in range(trials):
        d = rng.normal(size=f.p_params)
        d *= radius / np.linalg.norm(d)
        assert f.loglik_fn(f.theta_hat + d) <= f.loglik + 1e-9 * max(1.0, abs(f.loglik))


# -- hierarchical -----------------------------------------------------------

def test_hierarchical_hand_example():
    f = fit_hierarchical_normal(_grouped([0, 2, 4, 6], [0, 0, 1, 1]))
    assert f.mu_hat == pytest.approx([1, 5])
    assert f.sigma2_hat == pytest.approx(1.0)
    assert f.r_per_group == 2


def test_hierarchical_loglik_formula(rng):
    p, r = 4, 6
    data = hierarchical_data(p, r, rng)
    f = fit_hierarchical_normal(data)
    for i, rows in enumerate(data.group_indices()):
        assert f.mu_hat[i] == pytest.approx(np.mean(data.y[rows]), rel=1e-14)
    pr = p * r
    expect = -pr / 2 * math.log(2 * math.pi) - pr / 2 * math.log(f.sigma2_hat) - pr / 2
    assert f.loglik == pytest.approx(expect, abs=1e-12 * abs(expect))
    _assert_local_max(f, rng)


def test_hierarchical_errors():
    with pytest.raises(DegenerateFit):
        fit_hierarchical_normal(_grouped([5, 5, 5], [0, 0, 0]))
    with pytest.raises(UnbalancedGroups):
        fit_hierarchical_normal(_grouped([1, 2, 3, 4, 5], [0, 0, 1, 1, 1]))


# -- linear mixed -----------------------------------------------------------

def _dense_lmm_loglik(data, spec, beta, d, s2):
    X = data.design(spec.fixed_columns, spec.intercept_fixed)
    Z = data.design(spec.random_columns, spec.intercept_random)
    same = data.group[:, None] == data.group[None, :]
    V = (Z * d) @ Z.T * same + s2 * np.eye(data.n)
    return multivariate_normal(X @ beta, V).logpdf(data.y)


def test_lmm_matches_dense_oracle(rng):
    data = lmm_data(rng, groups=8, per=6, slope=True, sb=0.7)
    spec = ModelSpec(Family.LMM, ("x", "z"), ("z",), intercept_random=True)
    f = fit_lmm(data, spec)
    k = 3
    th = f.theta_hat
    assert f.loglik == pytest.approx(_dense_lmm_loglik(data, spec, th[:k], th[k:k + 2], th[-1]),
                                     abs=1e-8)
    # the likelihood function agrees away from the optimum too
    th2 = th * 1.1
    assert f.loglik_fn(th2) == pytest.approx(
        _dense_lmm_loglik(data, spec, th2[:k], th2[k:k + 2], th2[-1]), abs=1e-8)
    assert f.param_names == ("(Intercept)", "x", "z", "var[(Intercept)]", "var[z]", "sigma2")
    assert np.all(f.var_components >= VAR_LOWER)


def test_lmm_local_maximum_interior(rng):
    f = fit_lmm(lmm_data(rng, groups=10, per=10), LMM_INT)
    assert not any(f.at_bound)
    _assert_local_max(f, rng)


def test_lmm_equal_group_means_hits_bound(rng):
    groups, per = 6, 8
    g = np.repeat(np.arange(groups), per)
    x = rng.normal(size=groups * per)
    e = rng.normal(size=groups * per)
    for k in range(groups):
        e[g == k] -= e[g == k].mean()
    y = 2.0 + 0.5 * x + e
    # remove the x-induced group mean differences as well
    data = _grouped(y, g, x[:, None], ("x",))
    f = fit_lmm(data, LMM_INT)
    assert f.at_bound[0]
    assert f.var_components[0] == VAR_LOWER
    lin = fit_linear(data.base, ModelSpec(Family.LINEAR, ("x",)))
    assert f.loglik == pytest.approx(lin.loglik, abs=1e-6)


def test_lmm_no_random_columns_reproduces_linear(rng):
    data = lmm_data(rng, groups=5, per=6)
    f = fit_lmm(data, ModelSpec(Family.LMM, ("x",)))
    lin = fit_linear(data.base, ModelSpec(Family.LINEAR, ("x",)))
    np.testing.assert_allclose(f.beta_hat, lin.beta_hat, atol=1e-8)
    assert f.loglik == pytest.approx(lin.loglik, abs=1e-8)


def test_lmm_recovers_intercept_variance():
    est = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        f = fit_lmm(lmm_data(rng, groups=10, per=20, su0=2.0), LMM_INT)
        est.append(f.var_components[0])
    assert 2.0 <= np.mean(est) <= 6.0


def test_lmm_one_group_rejected(rng):
    data = _grouped(rng.normal(size=6), np.zeros(6, int), rng.normal(size=(6, 1)), ("x",))
    with pytest.raises(PreconditionError):
        fit_lmm(data, LMM_INT)


def test_fitting_is_deterministic(rng):
    data = lmm_data(rng, groups=6, per=5)
    a, b = fit_lmm(data, LMM_INT), fit_lmm(data, LMM_INT)
    np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
    assert a.loglik == b.loglik


# -- GLMM -------------------------------------------------------------------

def _group_integral_1d(y, eta, z, var, family):
    sd = math.sqrt(var)

    def integrand(b):
        lin = eta + z * b
        if family == "binomial":
            ll = np.sum(y * lin - np.logaddexp(0, lin))
        else:
            ll = np.sum(y * lin - np.exp(lin) - gammaln(y + 1))
        return math.exp(ll - 0.5 * b * b / var) / (sd * math.sqrt(2 * math.pi))

    val, _ = integrate.quad(integrand, -12 * sd, 12 * sd, limit=200, epsabs=0, epsrel=1e-12)
    return math.log(val)


@pytest.mark.parametrize("family", ["binomial", "poisson"])
def test_glmm_likelihood_matches_brute_force(rng, family):
    fam = Family.GLMM_BINOMIAL if family == "binomial" else Family.GLMM_POISSON
    data = glmm_data(rng, family, groups=12, per=6)
    spec = ModelSpec(fam, ("x",), (), intercept_random=True)
    f = fit_glmm(data, spec, nAGQ=15)
    beta, var = f.theta_hat[:2], f.theta_hat[2]
    x = data.base.column("x")
    total = 0.0
    for rows in data.group_indices():
        total += _group_integral_1d(data.y[rows], beta[0] + beta[1] * x[rows],
                                    1.0, var, family)
    assert f.loglik == pytest.approx(total, abs=1e-6)


def test_glmm_correlated_matches_2d_brute_force(rng):
    data = glmm_data(rng, "binomial", groups=10, per=10, sd=(0.8, 0.6))
    spec = ModelSpec(Family.GLMM_BINOMIAL, ("x",), ("x",), intercept_random=True,
                     correlated_random=True)
    f = fit_glmm(data, spec, nAGQ=9)
    beta = f.theta_hat[:2]
    v0, v1, c01 = f.theta_hat[2:]
    G = np.array([[v0, c01], [c01, v1]])
    Gi = np.linalg.inv(G)
    norm = 1.0 / (2 * math.pi * math.sqrt(np.linalg.det(G)))
    x = data.base.column("x")
    total = 0.0
    for rows in data.group_indices():
        yy, xx = data.y[rows], x[rows]

        def integrand(b1, b0):
            lin = beta[0] + b0 + (beta[1] + b1) * xx
            b = np.array([b0, b1])
            return math.exp(np.sum(yy * lin - np.logaddexp(0, lin)) - 0.5 * b @ Gi @ b) * norm

        s0, s1 = 10 * math.sqrt(v0), 10 * math.sqrt(v1)
        val, _ = integrate.dblquad(integrand, -s0, s0, -s1, s1, epsabs=0, epsrel=1e-10)
        total += math.log(val)
    assert f.loglik == pytest.approx(total, abs=1e-5)
    assert f.param_names[-1] == "cov[(Intercept),x]"


def test_glmm_quadrature_refinement(rng):
    data = glmm_data(rng, "binomial", groups=25, per=8)
    spec = ModelSpec(Family.GLMM_BINOMIAL, ("x",), (), intercept_random=True)
    ll = {k: fit_glmm(data, spec, nAGQ=k).loglik for k in (5, 7, 9, 25, 41)}
    err = [abs(ll[k] - ll[41]) for k in (5, 7, 9)]
    assert err[0] > err[1] > err[2]
    assert abs(ll[25] - ll[41]) < 1e-10
    # five nodes leave a real but small error on Bernoulli groups
    assert err[0] < 1e-3


def test_glmm_poisson_tiny_variance_matches_glm(rng):
    data = glmm_data(rng, "poisson", groups=15, per=6, beta=(0.5, 0.3), sd=(1e-6, 0.0))
    spec = ModelSpec(Family.GLMM_POISSON, ("x",), (), intercept_random=True)
    f = fit_glmm(data, spec)
    X = data.design(("x",), True)
    _, glm_ll = fit_glm(X, data.y, Family.GLMM_POISSON)
    assert f.loglik == pytest.approx(glm_ll, abs=1e-4)
    assert f.loglik >= glm_ll - 1e-6


def test_glmm_separation():
    g = np.repeat(np.arange(4), 6)
    x = np.tile(np.linspace(-1, 1, 6), 4)
    data = _grouped((x > 0).astype(float), g, x[:, None], ("x",))
    with pytest.raises(CompleteSeparation):
        fit_glmm(data, ModelSpec(Family.GLMM_BINOMIAL, ("x",), (), intercept_random=True))


def test_glmm_preconditions(rng):
    data = glmm_data(rng, "binomial", groups=5, per=4)
    spec = ModelSpec(Family.GLMM_BINOMIAL, ("x",), (), intercept_random=True)
    with pytest.raises(PreconditionError):
        fit_glmm(data, spec, nAGQ=4)
    with pytest.raises(PreconditionError):
        fit_glmm(data, ModelSpec(Family.GLMM_POISSON, ("x",)))
    bad = _grouped(np.full(20, 0.5), np.repeat(np.arange(5), 4), rng.normal(size=(20, 1)), ("x",))
    with pytest.raises(PreconditionError):
        fit_glmm(bad, spec)


def test_glmm_group_contributions_finite(rng):
    data = glmm_data(rng, "poisson", groups=10, per=5)
    spec = ModelSpec(Family.GLMM_POISSON, ("x",), (), intercept_random=True)
    f = fit_glmm(data, spec)
    assert math.isfinite(f.loglik) and f.loglik < 0
    _assert_local_max(f, rng, trials=30)


def test_dispatch(rng):
    data = hierarchical_data(3, 4, rng)
    f = fit(data, ModelSpec(Family.HIERARCHICAL_NORMAL))
    assert f.family is Family.HIERARCHICAL_NORMAL
    assert fit(data, ModelSpec(Family.HIERARCHICAL_NORMAL), n_eff=4).n_eff == 4

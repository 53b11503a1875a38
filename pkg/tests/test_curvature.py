import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvebic.core import Family, ModelSpec
from curvebic.curvature import (HessianConfig, hierarchical_logdet_closed_form,
                                linear_information, log_det_information, numerical_hessian,
                                observed_information, relative_ridge)
from curvebic.errors import DomainError, EvaluationFailure, NotPositiveDefinite
from curvebic.fitters import fit_hierarchical_normal, fit_linear

from conftest import exact_hierarchical, hierarchical_data


def test_quadratic_diag():
    A = np.diag([2.0, 3.0])
    H = numerical_hessian(lambda t: -0.5 * t @ A @ t, np.zeros(2))
    np.testing.assert_allclose(H, -A, rtol=0, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), d=st.integers(1, 5),
       scale=st.floats(0.01, 100.0))
def test_quadratic_exactness_at_maximizer(seed, d, scale):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(d, d))
    A = scale * (B @ B.T + d * np.eye(d))
    m = rng.normal(0, 5, size=d)
    H = numerical_hessian(lambda t: -0.5 * (t - m) @ A @ (t - m), m)
    assert np.max(np.abs(H + A)) <= 1e-8 * np.max(np.abs(A))


def test_symmetry_is_exact(rng):
    f = lambda t: -np.sum(t ** 4) - t[0] * t[1] ** 3 + np.sin(t[2]) * t[0]
    H = numerical_hessian(f, rng.normal(size=3))
    assert np.max(np.abs(H - H.T)) == 0.0


def test_linear_hessian_matches_analytic(rng):
    n = 40
    X = np.column_stack([np.ones(n), rng.normal(10, 1, n), rng.normal(3, 3, n)])
    y = X @ [1.0, 2.0, -1.0] + rng.normal(size=n)
    from curvebic.core import Dataset
    data = Dataset(y, X[:, 1:], ("a", "b"))
    f = fit_linear(data, ModelSpec(Family.LINEAR, ("a", "b")))
    J = -numerical_hessian(f.loglik_fn, f.theta_hat)
    Jt = linear_information(X, f.sigma2_hat)
    d = np.diag(Jt)
    np.testing.assert_allclose(np.diag(J), d, rtol=1e-5)
    off = np.abs(J - Jt) / np.sqrt(np.outer(d, d))
    assert off.max() < 1e-5


def test_hierarchical_offdiagonal_vanishes(rng):
    for _ in range(10):
        p, r = int(rng.integers(2, 7)), int(rng.integers(3, 21))
        f = fit_hierarchical_normal(hierarchical_data(p, r, rng))
        H = numerical_hessian(f.loglik_fn, f.theta_hat)
        assert np.max(np.abs(H[:p, p])) < 1e-6


def test_hierarchical_logdet_agreement(rng):
    for _ in range(20):
        p, r = int(rng.integers(2, 7)), int(rng.integers(3, 21))
        f = fit_hierarchical_normal(hierarchical_data(p, r, rng, sigma=rng.uniform(0.3, 3)))
        c = observed_information(f)
        ref = hierarchical_logdet_closed_form(p, r, f.sigma2_hat)
        assert abs(c.log_det - ref) < 1e-4


def test_cbrt_rule_remains_available(rng):
    f = fit_hierarchical_normal(hierarchical_data(3, 8, rng))
    c = observed_information(f, HessianConfig(step_rule="cbrt"))
    assert abs(c.log_det - hierarchical_logdet_closed_form(3, 8, f.sigma2_hat)) < 1e-2
    with pytest.raises(ValueError):
        HessianConfig(step_rule="fifth-root")
    with pytest.raises(ValueError):
        HessianConfig(regularization_ridge=-1.0)


def test_steps_positive_and_representable():
    cfg = HessianConfig()
    th = np.array([0.0, 1e-300, 3.7, -1e8])
    h = cfg.steps(th)
    assert np.all(h > 0)
    np.testing.assert_array_equal((th + h) - th, h)


@pytest.mark.parametrize("p,r,s2,expected", [
    (1, 1, 1.0, -0.693147),           # only -log 2 survives
    (3, 10, 1.0, 9.615806),            # 4 log 10 + log 3 - log 2
    (2, 5, 0.5, 7.600902),             # 3 log 5 + 4 log 2
])
def test_closed_form_values(p, r, s2, expected):
    assert hierarchical_logdet_closed_form(p, r, s2) == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize("args", [(0, 3, 1.0), (2, 0, 1.0), (2, 3, 0.0), (2, 3, -1.0)])
def test_closed_form_domain(args):
    with pytest.raises(DomainError):
        hierarchical_logdet_closed_form(*args)


def test_closed_form_diagonal_information():
    p, r, s2 = 4, 7, 0.8
    J = np.diag([r / s2] * p + [p * r / (2 * s2 ** 2)])
    c = log_det_information(-J)
    assert c.log_det == pytest.approx(hierarchical_logdet_closed_form(p, r, s2), abs=1e-12)


def test_identity_and_wrong_sign():
    c = log_det_information(-np.eye(2))
    assert c.log_det == 0.0 and c.min_eigenvalue == pytest.approx(1.0)
    with pytest.raises(NotPositiveDefinite) as exc:
        log_det_information(np.eye(2))
    assert exc.value.min_eigenvalue == pytest.approx(-1.0)


def test_ridge_flags_and_rescues():
    H = -np.diag([1.0, 0.0])
    with pytest.raises(NotPositiveDefinite):
        log_det_information(H)
    ridge = relative_ridge(H)
    c = log_det_information(H, HessianConfig(regularization_ridge=ridge))
    assert c.regularized and math.isfinite(c.log_det)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), r1=st.floats(0, 10), r2=st.floats(0, 10))
def test_ridge_monotone(seed, r1, r2):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(3, 3))
    H = -(B @ B.T + 0.1 * np.eye(3))
    lo, hi = sorted((r1, r2))
    a = log_det_information(H, HessianConfig(regularization_ridge=lo)).log_det
    b = log_det_information(H, HessianConfig(regularization_ridge=hi)).log_det
    assert b >= a - 1e-12


def test_evaluation_failure_reports_point():
    f = lambda t: math.log(t[0]) if t[0] > 0 else -math.inf
    with pytest.raises(EvaluationFailure) as exc:
        numerical_hessian(f, np.array([1e-12]))
    assert exc.value.point is not None


def test_information_symmetric_invariant(rng):
    f = fit_hierarchical_normal(exact_hierarchical(3, 10, 1.0, rng))
    c = observed_information(f)
    J = c.information
    assert np.max(np.abs(J - J.T)) <= 1e-10 * np.max(np.abs(J))
    assert c.min_eigenvalue > 0

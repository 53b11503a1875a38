"""Observed information at the MLE and its log-determinant."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import CurvatureResult, FitResult
from .errors import DomainError, EvaluationFailure, NotPositiveDefinite, PreconditionError

EPS = np.finfo(float).eps

# Relative step multipliers, h_j = multiplier * max(1, |theta_j|).
STEP_RULES = {
    "cbrt": EPS ** (1 / 3),
    "quartic": EPS ** 0.25,
    # two larger steps combined to cancel the h^2 error term
    "richardson": 2e-2,
}


@dataclass(frozen=True)
class HessianConfig:
    """Finite-difference settings.

    ``step_rule`` picks the relative step (see ``STEP_RULES``). ``"quartic"``
    (eps**0.25) balances truncation and rounding for second differences of
    function values; ``"cbrt"`` (eps**(1/3)) is kept for comparison.
    ``"richardson"`` extrapolates central differences at steps h and h/2
    with h = 0.02 max(1, |theta|). It is exact up to rounding for quadratics
    but needs the function defined that far from the point, so the MLE
    curvature keeps the small step.
    """

    step_rule: str = "quartic"
    regularization_ridge: float = 0.0
    symmetrize: bool = True

    def __post_init__(self):
        if self.step_rule not in STEP_RULES:
            raise PreconditionError(f"unknown step rule {self.step_rule!r}")
        if not self.regularization_ridge >= 0:
            raise PreconditionError("regularization_ridge must be >= 0")

    def steps(self, theta: np.ndarray) -> np.ndarray:
        h = STEP_RULES[self.step_rule] * np.maximum(1.0, np.abs(theta))
        # use the representable difference so the divisor is exact
        return (theta + h) - theta


def _eval(f, x):
    v = float(f(x))
    if not math.isfinite(v):
        raise EvaluationFailure(x.copy())
    return v


def numerical_hessian(loglik: Callable[[np.ndarray], float], theta_hat,
                      cfg: HessianConfig | None = None) -> np.ndarray:
    """Central-difference Hessian of ``loglik`` at ``theta_hat``.

    Uses 2p**2 + 1 evaluations per step size: the three-point rule on the
    diagonal and the four-point rule for each off-diagonal pair.
    """
    cfg = cfg or HessianConfig()
    x0 = np.array(theta_hat, dtype=float)
    h = cfg.steps(x0)
    f0 = _eval(loglik, x0)
    if cfg.step_rule == "richardson":
        half = (x0 + 0.5 * h) - x0
        H = (4.0 * _central(loglik, x0, f0, half) - _central(loglik, x0, f0, h)) / 3.0
    else:
        H = _central(loglik, x0, f0, h)
    if cfg.symmetrize:
        H = 0.5 * (H + H.T)
    return H


def _central(loglik, x0, f0, h):
    p = x0.size
    H = np.empty((p, p))
    fp = np.empty(p)
    fm = np.empty(p)
    for i in range(p):
        x = x0.copy()
        x[i] += h[i]
        fp[i] = _eval(loglik, x)
        x[i] = x0[i] - h[i]
        fm[i] = _eval(loglik, x)
        H[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / (h[i] * h[i])
    for i in range(p):
        for j in range(i + 1, p):
            x = x0.copy()
            x[i] += h[i]; x[j] += h[j]
            fpp = _eval(loglik, x)
            x[j] = x0[j] - h[j]
            fpm = _eval(loglik, x)
            x[i] = x0[i] - h[i]
            fmm = _eval(loglik, x)
            x[j] = x0[j] + h[j]
            fmp = _eval(loglik, x)
            H[i, j] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
            H[j, i] = H[i, j]
    return H


def numerical_gradient(fn, theta, cfg: HessianConfig | None = None) -> np.ndarray:
    x0 = np.array(theta, dtype=float)
    h = EPS ** (1 / 3) * np.maximum(1.0, np.abs(x0))
    h = (x0 + h) - x0
    g = np.empty(x0.size)
    for i in range(x0.size):
        x = x0.copy()
        x[i] += h[i]
        up = _eval(fn, x)
        x[i] = x0[i] - h[i]
        g[i] = (up - _eval(fn, x)) / (2 * h[i])
    return g


def log_det_information(H, cfg: HessianConfig | None = None) -> CurvatureResult:
    """Log-determinant of J = -H (+ ridge * I) via Cholesky.

    Raises :class:`NotPositiveDefinite` when J has no Cholesky factor, which
    means the point is not a strict local maximum or the model is singular.
    """
    cfg = cfg or HessianConfig()
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise PreconditionError("Hessian must be square")
    J = -0.5 * (H + H.T)
    ridge = cfg.regularization_ridge
    if ridge > 0:
        J = J + ridge * np.eye(J.shape[0])
    eig = np.linalg.eigvalsh(J)
    min_eig = float(eig[0]) if eig.size else math.inf
    try:
        L = np.linalg.cholesky(J)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(min_eig) from None
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    return CurvatureResult(J, log_det, min_eig, regularized=ridge > 0)


def relative_ridge(H, scale: float = 1e-8) -> float:
    """The ridge ``scale * max(diag J)`` suggested for borderline fits."""
    return scale * float(np.max(np.abs(np.diag(H))))


def observed_information(fit: FitResult, cfg: HessianConfig | None = None) -> CurvatureResult:
    if fit.loglik_fn is None:
        raise PreconditionError("fit carries no log-likelihood function")
    H = numerical_hessian(fit.loglik_fn, fit.theta_hat, cfg)
    return log_det_information(H, cfg)


def hierarchical_logdet_closed_form(p: int, r: int, sigma2_hat: float) -> float:
    """(p+1) log r + log p - log 2 - (p+2) log sigma2 for the balanced normal
    means model with p groups of r observations."""
    if not (p >= 1 and r >= 1 and sigma2_hat > 0):
        raise DomainError("need p >= 1, r >= 1 and sigma2_hat > 0")
    return ((p + 1) * math.log(r) + math.log(p) - math.log(2)
            - (p + 2) * math.log(sigma2_hat))


def linear_information(X, sigma2: float) -> np.ndarray:
    """Analytic observed information of the Gaussian linear model at its MLE:
    blockdiag(X'X / sigma2, n / (2 sigma2**2))."""
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    J = np.zeros((k + 1, k + 1))
    J[:k, :k] = X.T @ X / sigma2
    J[k, k] = n / (2.0 * sigma2 ** 2)
    return J

"""Derivative-free maximization shared by the fitters and the posterior-mode search."""
from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import minimize

from .curvature import HessianConfig, numerical_gradient, numerical_hessian
from .errors import EvaluationFailure

SIMPLEX_EDGE = 0.5
MAX_ITER = 2000


class OptimResult(NamedTuple):
    x: np.ndarray
    value: float
    iterations: int
    converged: bool


def simplex_maximize(fn: Callable[[np.ndarray], float], x0, *, edge: float = SIMPLEX_EDGE,
                     max_iter: int = MAX_ITER, rtol: float = 1e-8,
                     max_restarts: int = 6, xatol: float = math.inf) -> OptimResult:
    """Maximize ``fn`` with restarted Nelder-Mead.

    Each pass starts a fresh simplex of edge ``edge`` at the incumbent.
    Convergence means a pass ended on its own tolerances and improved the
    objective by less than ``rtol`` relative to the previous pass.
    ``max_iter`` bounds the total iteration count over all passes.
    By default a pass stops on function values alone (``xatol`` = inf), so
    directions along which the objective is flat cannot stall it.
    """
    x = np.atleast_1d(np.array(x0, dtype=float))
    d = x.size

    def neg(z):
        v = fn(z)
        return -v if math.isfinite(v) else math.inf

    best = neg(x)
    if not math.isfinite(best):
        raise EvaluationFailure(x)
    used = 0
    converged = False
    for _ in range(max_restarts):
        budget = max_iter - used
        if budget <= 0:
            break
        simplex = np.vstack([x, x + edge * np.eye(d)])
        res = minimize(neg, x, method="Nelder-Mead",
                       options=dict(initial_simplex=simplex, maxiter=budget,
                                    maxfev=50 * budget, xatol=xatol,
                                    fatol=0.1 * rtol * max(1.0, abs(best)),
                                    adaptive=d > 3))
        used += int(res.nit)
        improved = best - res.fun
        if res.fun <= best:
            x, best = np.array(res.x, dtype=float), float(res.fun)
        if res.status == 0 and improved <= rtol * max(1.0, abs(best)):
            converged = True
            break
    return OptimResult(x, -best, used, converged)


def newton_polish(fn: Callable[[np.ndarray], float], x0, *, gtol: float = 1e-6,
                  max_steps: int = 20) -> OptimResult:
    """Newton steps with finite-difference derivatives and step halving.

    Stops early when the Hessian is not negative definite; ``converged``
    reports whether the gradient norm fell below ``gtol``.
    """
    x = np.array(x0, dtype=float)
    f = float(fn(x))
    cfg = HessianConfig()
    steps = 0
    for steps in range(1, max_steps + 1):
        try:
            g = numerical_gradient(fn, x)
        except EvaluationFailure:
            break
        if np.linalg.norm(g) < gtol:
            return OptimResult(x, f, steps, True)
        try:
            H = numerical_hessian(fn, x, cfg)
            L = np.linalg.cholesky(-H)
        except (EvaluationFailure, np.linalg.LinAlgError):
            break
        step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        t = 1.0
        for _ in range(30):
            cand = x + t * step
            fc = fn(cand)
            if math.isfinite(fc) and fc >= f:
                break
            t *= 0.5
        else:
            break
        if np.max(np.abs(cand - x)) == 0.0:
            break
        x, f = cand, float(fc)
    try:
        ok = bool(np.linalg.norm(numerical_gradient(fn, x)) < gtol)
    except EvaluationFailure:
        ok = False
    return OptimResult(x, f, steps, ok)

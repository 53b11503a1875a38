"""Pure-Python adaptive Gauss-Hermite kernel (fallback for ``_agq``).

Rows must be sorted by group; ``starts`` holds the ``g + 1`` row offsets.
Random effects enter through ``w = Z @ L`` with L the Cholesky factor of
the random-effect covariance, so the integration variable u is standard
normal a priori. Newton runs on all groups at once.
"""
import numpy as np
from scipy.special import gammaln, logsumexp

BINOMIAL, POISSON = 0, 1
NEWTON_TOL = 1e-10
NEWTON_MAX = 100
_LOG2PI = np.log(2.0 * np.pi)


def _logf(eta, y, family):
    if family == BINOMIAL:
        return y * eta - np.logaddexp(0.0, eta)
    return y * eta - np.exp(eta) - gammaln(y + 1.0)


def _mean_var(eta, family):
    if family == BINOMIAL:
        mu = 0.5 * (1.0 + np.tanh(0.5 * eta))
        return mu, mu * (1.0 - mu)
    mu = np.exp(eta)
    return mu, mu


def _inner(eta, y, w, gid, g, family, u):
    lin = eta + np.einsum("nq,nq->n", w, u[gid])
    return np.bincount(gid, _logf(lin, y, family), minlength=g) - 0.5 * np.sum(u * u, axis=1)


def _solve_small(Hn, grad):
    if Hn.shape[1] == 1:
        return grad / Hn[:, 0, :]
    a, b, c = Hn[:, 0, 0], Hn[:, 0, 1], Hn[:, 1, 1]
    det = a * c - b * b
    return np.column_stack([(c * grad[:, 0] - b * grad[:, 1]) / det,
                            (a * grad[:, 1] - b * grad[:, 0]) / det])


def _curvature(eta, y, w, gid, g, family, u):
    q = w.shape[1]
    lin = eta + np.einsum("nq,nq->n", w, u[gid])
    mu, v = _mean_var(lin, family)
    grad = np.empty((g, q))
    Hn = np.empty((g, q, q))
    for a in range(q):
        grad[:, a] = np.bincount(gid, (y - mu) * w[:, a], minlength=g) - u[:, a]
        for b in range(a, q):
            Hn[:, a, b] = np.bincount(gid, v * w[:, a] * w[:, b], minlength=g)
            Hn[:, b, a] = Hn[:, a, b]
        Hn[:, a, a] += 1.0
    return grad, Hn


def agq_loglik(eta, y, w, starts, family, nodes, logw, modes):
    """Per-group log marginal likelihoods; ``modes`` (g x q) is updated in place.

    Returns ``(contributions, failed_group)`` where ``failed_group`` is -1
    on success.
    """
    starts = np.asarray(starts, dtype=np.int64)
    g = starts.size - 1
    q = w.shape[1]
    gid = np.repeat(np.arange(g), np.diff(starts))
    u = np.array(modes, dtype=float)
    h = _inner(eta, y, w, gid, g, family, u)
    active = np.ones(g, dtype=bool)
    for _ in range(NEWTON_MAX):
        grad, Hn = _curvature(eta, y, w, gid, g, family, u)
        step = _solve_small(Hn, grad)
        step[~active] = 0.0
        t = np.ones(g)
        for _ in range(40):
            cand = u + t[:, None] * step
            hc = _inner(eta, y, w, gid, g, family, cand)
            bad = active & ~(hc >= h - 1e-12 * np.abs(h))
            if not bad.any():
                break
            t[bad] *= 0.5
        u = np.where(active[:, None], cand, u)
        h = np.where(active, hc, h)
        size = np.max(np.abs(t[:, None] * step), axis=1)
        active &= size >= NEWTON_TOL * (1.0 + np.max(np.abs(u), axis=1))
        if not active.any():
            break
    # a NaN step compares False above, so non-finite modes need their own check
    failed = active | ~np.all(np.isfinite(u), axis=1) | ~np.isfinite(h)
    if failed.any():
        return None, int(np.flatnonzero(failed)[0])
    modes[...] = u
    _, Hn = _curvature(eta, y, w, gid, g, family, u)
    if q == 1:
        R = (1.0 / np.sqrt(Hn[:, 0, 0]))[:, None, None]
        logdetR = np.log(R[:, 0, 0])
        X = nodes[:, None]
        LW = logw
    else:
        a, b, c = Hn[:, 0, 0], Hn[:, 0, 1], Hn[:, 1, 1]
        det = a * c - b * b
        s11, s21, s22 = c / det, -b / det, a / det
        r11 = np.sqrt(s11)
        r21 = s21 / r11
        r22 = np.sqrt(s22 - r21 * r21)
        R = np.zeros((g, 2, 2))
        R[:, 0, 0], R[:, 1, 0], R[:, 1, 1] = r11, r21, r22
        logdetR = np.log(r11) + np.log(r22)
        xa, xb = np.meshgrid(nodes, nodes, indexing="ij")
        X = np.column_stack([xa.ravel(), xb.ravel()])
        LW = np.add.outer(logw, logw).ravel()
    # U[g, k, :] = u_g + sqrt(2) R_g x_k
    U = u[:, None, :] + np.sqrt(2.0) * np.einsum("gab,kb->gka", R, X)
    lin = eta[:, None] + np.einsum("nq,nkq->nk", w, U[gid])
    lf = np.add.reduceat(_logf(lin, y[:, None], family), starts[:-1], axis=0)
    hk = lf - 0.5 * np.sum(U * U, axis=2)
    terms = LW[None, :] + np.sum(X * X, axis=1)[None, :] + hk
    out = (0.5 * q * np.log(2.0) + logdetR + logsumexp(terms, axis=1)
           - 0.5 * q * _LOG2PI)
    return out, -1

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled adaptive Gauss-Hermite kernel; same contract as ``_agq_py``."""
import numpy as np

from libc.math cimport exp, log, log1p, lgamma, sqrt, fabs, tanh, INFINITY

cdef int BINOMIAL = 0
cdef double NEWTON_TOL = 1e-10
cdef int NEWTON_MAX = 100
cdef double LOG2PI = 1.8378770664093453


cdef inline double logf(double eta, double y, int family) nogil:
    if family == BINOMIAL:
        if eta > 0:
            return y * eta - eta - log1p(exp(-eta))
        return y * eta - log1p(exp(eta))
    return y * eta - exp(eta) - lgamma(y + 1.0)


cdef inline double inner(const double[::1] eta, const double[::1] y,
                         const double[:, ::1] w, Py_ssize_t lo, Py_ssize_t hi,
                         int q, int family, double u0, double u1) nogil:
    cdef double s = 0.0, lin
    cdef Py_ssize_t j
    for j in range(lo, hi):
        lin = eta[j] + w[j, 0] * u0
        if q == 2:
            lin += w[j, 1] * u1
        s += logf(lin, y[j], family)
    return s - 0.5 * (u0 * u0 + u1 * u1)


cdef inline void curvature(const double[::1] eta, const double[::1] y,
                           const double[:, ::1] w, Py_ssize_t lo, Py_ssize_t hi,
                           int q, int family, double u0, double u1,
                           double* g, double* H) nogil:
    # g[0..1] gradient, H = [a, b, c] for [[a, b], [b, c]]
    cdef double lin, mu, v, r
    cdef Py_ssize_t j
    g[0] = -u0; g[1] = -u1
    H[0] = 1.0; H[1] = 0.0; H[2] = 1.0
    for j in range(lo, hi):
        lin = eta[j] + w[j, 0] * u0
        if q == 2:
            lin += w[j, 1] * u1
        if family == BINOMIAL:
            mu = 0.5 * (1.0 + tanh(0.5 * lin))
            v = mu * (1.0 - mu)
        else:
            mu = exp(lin)
            v = mu
        r = y[j] - mu
        g[0] += r * w[j, 0]
        H[0] += v * w[j, 0] * w[j, 0]
        if q == 2:
            g[1] += r * w[j, 1]
            H[1] += v * w[j, 0] * w[j, 1]
            H[2] += v * w[j, 1] * w[j, 1]


def agq_loglik(const double[::1] eta, const double[::1] y, const double[:, ::1] w,
               const long long[::1] starts, int family, const double[::1] nodes,
               const double[::1] logw, double[:, ::1] modes):
    cdef Py_ssize_t g = starts.shape[0] - 1
    cdef int q = w.shape[1]
    cdef Py_ssize_t m = nodes.shape[0]
    cdef Py_ssize_t gi, lo, hi, it, half, ka, kb, j
    cdef double u0, u1, h, hc, s0, s1, t, c0, c1, det, step
    cdef double grad[2]
    cdef double Hn[3]
    cdef double r11, r21, r22, x0, x1, lin, lf, term, mx, acc, logdetR
    cdef bint ok
    out_arr = np.empty(g)
    cdef double[::1] out = out_arr
    terms_arr = np.empty(m * m if q == 2 else m)
    cdef double[::1] terms = terms_arr
    cdef Py_ssize_t K, k
    cdef double sq2 = sqrt(2.0)

    for gi in range(g):
        lo = starts[gi]
        hi = starts[gi + 1]
        u0 = modes[gi, 0]
        u1 = modes[gi, 1] if q == 2 else 0.0
        h = inner(eta, y, w, lo, hi, q, family, u0, u1)
        ok = False
        for it in range(NEWTON_MAX):
            curvature(eta, y, w, lo, hi, q, family, u0, u1, grad, Hn)
            if q == 1:
                s0 = grad[0] / Hn[0]
                s1 = 0.0
            else:
                det = Hn[0] * Hn[2] - Hn[1] * Hn[1]
                s0 = (Hn[2] * grad[0] - Hn[1] * grad[1]) / det
                s1 = (Hn[0] * grad[1] - Hn[1] * grad[0]) / det
            t = 1.0
            for half in range(40):
                c0 = u0 + t * s0
                c1 = u1 + t * s1
                hc = inner(eta, y, w, lo, hi, q, family, c0, c1)
                if hc >= h - 1e-12 * fabs(h):
                    break
                t *= 0.5
            u0 = c0
            u1 = c1
            h = hc
            step = fabs(t * s0)
            if fabs(t * s1) > step:
                step = fabs(t * s1)
            mx = fabs(u0)
            if fabs(u1) > mx:
                mx = fabs(u1)
            if step < NEWTON_TOL * (1.0 + mx):
                ok = True
                break
        if not ok:
            return None, gi
        modes[gi, 0] = u0
        if q == 2:
            modes[gi, 1] = u1
        curvature(eta, y, w, lo, hi, q, family, u0, u1, grad, Hn)
        if q == 1:
            r11 = 1.0 / sqrt(Hn[0])
            r21 = 0.0
            r22 = 1.0
            logdetR = log(r11)
            K = m
        else:
            det = Hn[0] * Hn[2] - Hn[1] * Hn[1]
            r11 = sqrt(Hn[2] / det)
            r21 = (-Hn[1] / det) / r11
            r22 = sqrt(Hn[0] / det - r21 * r21)
            logdetR = log(r11) + log(r22)
            K = m * m
        mx = -INFINITY
        for k in range(K):
            if q == 1:
                x0 = nodes[k]
                x1 = 0.0
                term = logw[k] + x0 * x0
                c0 = u0 + sq2 * r11 * x0
                c1 = 0.0
            else:
                ka = k // m
                kb = k % m
                x0 = nodes[ka]
                x1 = nodes[kb]
                term = logw[ka] + logw[kb] + x0 * x0 + x1 * x1
                c0 = u0 + sq2 * r11 * x0
                c1 = u1 + sq2 * (r21 * x0 + r22 * x1)
            term += inner(eta, y, w, lo, hi, q, family, c0, c1)
            terms[k] = term
            if term > mx:
                mx = term
        acc = 0.0
        for k in range(K):
            acc += exp(terms[k] - mx)
        out[gi] = 0.5 * q * log(2.0) + logdetR + mx + log(acc) - 0.5 * q * LOG2PI
    return out_arr, -1

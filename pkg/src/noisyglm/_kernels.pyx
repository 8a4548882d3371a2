# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: fused per-observation link maps and Gram-form lasso CD.

Signatures and return values match ``noisyglm._fallback``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, sqrt, INFINITY

cnp.import_array()


cdef inline double _log_sigmoid(double t) noexcept nogil:
    if t >= 0.0:
        return -log1p(exp(-t))
    return t - log1p(exp(t))


cdef inline double _logaddexp(double x, double y) noexcept nogil:
    if x == -INFINITY:
        return y
    if y == -INFINITY:
        return x
    if x > y:
        return x + log1p(exp(y - x))
    return y + log1p(exp(x - y))



# below this, m or q is formed in log space to avoid underflow in log()
DEF _TINY = 1e-250


cdef inline void _means(double t, double a, double b, double rho1,
                        double la, double lb, double lr1,
                        double *mu, double *mubar, double *v,
                        double *m, double *q, double *lm, double *lq) noexcept nogil:
    cdef double e = exp(-fabs(t))
    cdef double inv = 1.0 / (1.0 + e)
    if t >= 0.0:
        mu[0] = inv
        mubar[0] = e * inv
    else:
        mu[0] = e * inv
        mubar[0] = inv
    v[0] = e * inv * inv
    m[0] = a * mu[0] + b
    q[0] = a * mubar[0] + rho1
    if m[0] > _TINY:
        lm[0] = log(m[0])
    else:
        lm[0] = _logaddexp(la + _log_sigmoid(t), lb)
    if q[0] > _TINY:
        lq[0] = log(q[0])
    else:
        lq[0] = _logaddexp(la + _log_sigmoid(-t), lr1)


cdef inline double _h1(double a, double la, double v, double m, double q,
                       double t, double lm, double lq) noexcept nogil:
    if m > _TINY and q > _TINY:
        return a * v / (m * q)
    return exp(la + _log_sigmoid(t) + _log_sigmoid(-t) - lm - lq)


def h_terms(t, double a, double b, double rho1):
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64).ravel()
    cdef Py_ssize_t n = tv.shape[0], i
    h_arr = np.empty(n)
    h1_arr = np.empty(n)
    h2_arr = np.empty(n)
    h3_arr = np.empty(n)
    cdef double[::1] h = h_arr, h1 = h1_arr, h2 = h2_arr, h3 = h3_arr
    cdef double la = log(a)
    cdef double lb = log(b) if b > 0.0 else -INFINITY
    cdef double lr1 = log(rho1) if rho1 > 0.0 else -INFINITY
    cdef double ti, mu, mubar, v, lm, lq, m, q, s, d1, d2, qm
    with nogil:
        for i in range(n):
            ti = tv[i]
            _means(ti, a, b, rho1, la, lb, lr1, &mu, &mubar, &v, &m, &q, &lm, &lq)
            s = mubar - mu
            qm = q - m
            d1 = _h1(a, la, v, m, q, ti, lm, lq)
            d2 = d1 * s - d1 * d1 * qm
            h[i] = lm - lq
            h1[i] = d1
            h2[i] = d2
            h3[i] = d2 * (s - 2.0 * d1 * qm) - 2.0 * v * d1 * (1.0 - a * d1)
    shape = np.shape(t)
    return (h_arr.reshape(shape), h1_arr.reshape(shape),
            h2_arr.reshape(shape), h3_arr.reshape(shape))


def lik_terms(t, z, double a, double b, double rho1):
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64).ravel()
    cdef const double[::1] zv = np.ascontiguousarray(
        np.broadcast_to(np.asarray(z, dtype=np.float64), np.shape(t))).ravel()
    cdef Py_ssize_t n = tv.shape[0], i
    val_arr = np.empty(n)
    d1_arr = np.empty(n)
    wi_arr = np.empty(n)
    wr_arr = np.empty(n)
    cdef double[::1] val = val_arr, dd = d1_arr, wi = wi_arr, wr = wr_arr
    cdef double la = log(a)
    cdef double lb = log(b) if b > 0.0 else -INFINITY
    cdef double lr1 = log(rho1) if rho1 > 0.0 else -INFINITY
    cdef double ti, zi, mu, mubar, v, lm, lq, m, q, h1, h2, r
    with nogil:
        for i in range(n):
            ti = tv[i]
            zi = zv[i]
            _means(ti, a, b, rho1, la, lb, lr1, &mu, &mubar, &v, &m, &q, &lm, &lq)
            h1 = _h1(a, la, v, m, q, ti, lm, lq)
            h2 = h1 * (mubar - mu) - h1 * h1 * (q - m)
            r = m - zi
            val[i] = -(zi * lm + (1.0 - zi) * lq)
            dd[i] = r * h1
            wi[i] = m * q * h1 * h1
            wr[i] = r * h2
    return val_arr, d1_arr, wi_arr, wr_arr


def sur_terms(t, tz):
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64).ravel()
    cdef const double[::1] zv = np.ascontiguousarray(
        np.broadcast_to(np.asarray(tz, dtype=np.float64), np.shape(t))).ravel()
    cdef Py_ssize_t n = tv.shape[0], i
    val_arr = np.empty(n)
    d1_arr = np.empty(n)
    w_arr = np.empty(n)
    cdef double[::1] val = val_arr, dd = d1_arr, w = w_arr
    cdef double ti, e, inv, mu
    with nogil:
        for i in range(n):
            ti = tv[i]
            e = exp(-fabs(ti))
            inv = 1.0 / (1.0 + e)
            mu = inv if ti >= 0.0 else e * inv
            # softplus(t) = max(t, 0) + log1p(exp(-|t|))
            val[i] = (ti if ti > 0.0 else 0.0) + log1p(e) - zv[i] * ti
            dd[i] = mu - zv[i]
            w[i] = e * inv * inv
    return val_arr, d1_arr, w_arr


def lasso_cd_gram(G, c, lam, double[::1] beta, int max_sweeps, double tol):
    cdef const double[:, ::1] Gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[::1] lv = np.ascontiguousarray(
        np.broadcast_to(np.asarray(lam, dtype=np.float64), (Gv.shape[0],)))
    cdef Py_ssize_t p = Gv.shape[0], k, j
    g_arr = np.ascontiguousarray(c, dtype=np.float64) - np.asarray(G) @ np.asarray(beta)
    cdef double[::1] g = g_arr
    cdef double gkk, bk, zk, lk, new, delta, ad, max_delta
    cdef int sweep
    with nogil:
        for sweep in range(1, max_sweeps + 1):
            max_delta = 0.0
            for k in range(p):
                gkk = Gv[k, k]
                if gkk <= 0.0:
                    continue
                bk = beta[k]
                zk = g[k] + gkk * bk
                lk = lv[k]
                if zk > lk:
                    new = (zk - lk) / gkk
                elif zk < -lk:
                    new = (zk + lk) / gkk
                else:
                    new = 0.0
                delta = new - bk
                if delta != 0.0:
                    # G is symmetric: row k equals column k
                    for j in range(p):
                        g[j] -= delta * Gv[k, j]
                    beta[k] = new
                    ad = fabs(delta) * sqrt(gkk)
                    if ad > max_delta:
                        max_delta = ad
            if max_delta < tol:
                with gil:
                    return sweep, True
    return max_sweeps, False

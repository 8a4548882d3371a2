"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` function for function and are used when the
compiled extension is not importable (or ``NOISYGLM_PURE_PYTHON=1``).
"""
import numpy as np

_NEG_INF = -np.inf


def _log_sigmoid(t):
    return -np.logaddexp(0.0, -t)


def _logs(t, a, b, rho1):
    """Return log mu, log(1-mu), log m, log q with m = a*mu + b, q = 1 - m."""
    lmu = _log_sigmoid(t)
    lmubar = _log_sigmoid(-t)
    la = np.log(a)
    lb = np.log(b) if b > 0 else _NEG_INF
    lr1 = np.log(rho1) if rho1 > 0 else _NEG_INF
    lm = np.logaddexp(la + lmu, lb)
    lq = np.logaddexp(la + lmubar, lr1)
    return lmu, lmubar, lm, lq


def h_terms(t, a, b, rho1):
    """h_LN and its first three derivatives, elementwise over ``t``."""
    t = np.asarray(t, dtype=float)
    lmu, lmubar, lm, lq = _logs(t, a, b, rho1)
    mu = np.exp(lmu)
    m = a * mu + b
    q = rho1 + a * np.exp(lmubar)
    v = np.exp(lmu + lmubar)
    one_m2mu = -np.tanh(0.5 * t)
    h = lm - lq
    h1 = np.exp(np.log(a) + lmu + lmubar - lm - lq)
    qm = q - m
    h2 = h1 * one_m2mu - h1 * h1 * qm
    h3 = h2 * (one_m2mu - 2.0 * h1 * qm) - 2.0 * v * h1 * (1.0 - a * h1)
    return h, h1, h2, h3


def lik_terms(t, z, a, b, rho1):
    """Per-observation likelihood loss, its t-derivative, rho_I and rho_R."""
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    lmu, lmubar, lm, lq = _logs(t, a, b, rho1)
    m = a * np.exp(lmu) + b
    q = rho1 + a * np.exp(lmubar)
    one_m2mu = -np.tanh(0.5 * t)
    h1 = np.exp(np.log(a) + lmu + lmubar - lm - lq)
    h2 = h1 * one_m2mu - h1 * h1 * (q - m)
    resid = m - z
    val = -(z * lm + (1.0 - z) * lq)
    d1 = resid * h1
    w_i = m * q * h1 * h1
    w_r = resid * h2
    return val, d1, w_i, w_r


def sur_terms(t, tz):
    """Per-observation surrogate loss, its t-derivative and A''(t)."""
    t = np.asarray(t, dtype=float)
    tz = np.asarray(tz, dtype=float)
    lmu = _log_sigmoid(t)
    lmubar = _log_sigmoid(-t)
    val = np.logaddexp(0.0, t) - tz * t
    d1 = np.exp(lmu) - tz
    w = np.exp(lmu + lmubar)
    return val, d1, w


def lasso_cd_gram(G, c, lam, beta, max_sweeps, tol):
    """Cyclic coordinate descent for 0.5 b'Gb - c'b + sum_k lam_k |b_k|.

    ``lam`` is a scalar or per-coordinate vector; ``beta`` is updated in
    place. Returns (sweeps, converged).
    """
    p = G.shape[0]
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (p,))
    g = c - G @ beta
    diag = np.diagonal(G).copy()
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        for k in range(p):
            gkk = diag[k]
            if gkk <= 0.0:
                continue
            bk = beta[k]
            zk = g[k] + gkk * bk
            lk = lam[k]
            if zk > lk:
                new = (zk - lk) / gkk
            elif zk < -lk:
                new = (zk + lk) / gkk
            else:
                new = 0.0
            delta = new - bk
            if delta != 0.0:
                g -= delta * G[:, k]
                beta[k] = new
                ad = abs(delta) * np.sqrt(gkk)
                if ad > max_delta:
                    max_delta = ad
        if max_delta < tol:
            return sweep, True
    return max_sweeps, False

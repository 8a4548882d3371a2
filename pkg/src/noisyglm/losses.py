"""Likelihood and convex surrogate losses for noisy-label logistic regression.

Both losses are averages over observations of a scalar function of the
linear predictor ``t_i = x_i' beta``. Hessians are reported as
per-observation weights; the p x p matrix is ``X' diag(w) X / n``.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, NoisyGLMError
from .glm_core import NoiseModel, surrogate_target

LIKELIHOOD = "likelihood"
SURROGATE = "surrogate"
LOSS_KINDS = (LIKELIHOOD, SURROGATE)


@dataclass
class Dataset:
    """Design ``X`` (n x p), observed labels ``z`` and optional clean labels ``y``."""

    X: np.ndarray
    z: np.ndarray
    y: Optional[np.ndarray] = None
    intercept_col: Optional[int] = None
    names: Optional[Sequence[str]] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DimensionError(f"X must be 2-d, got shape {X.shape}")
        z = np.asarray(self.z, dtype=float).ravel()
        if X.shape[0] < 1:
            raise DimensionError("need at least one observation")
        if z.shape[0] != X.shape[0]:
            raise DimensionError(f"X has {X.shape[0]} rows but z has {z.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise NoisyGLMError("X contains non-finite entries")
        if not np.all((z == 0) | (z == 1)):
            raise NoisyGLMError("labels z must be 0/1")
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).ravel()
            if y.shape != z.shape or not np.all((y == 0) | (y == 1)):
                raise NoisyGLMError("clean labels y must be 0/1 with the same length as z")
            self.y = y
        if self.intercept_col is not None and not 0 <= self.intercept_col < X.shape[1]:
            raise DimensionError(f"intercept_col {self.intercept_col} out of range")
        if self.names is not None and len(self.names) != X.shape[1]:
            raise DimensionError("names must have one entry per column of X")
        self.X = X
        self.z = z

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, rows):
        return Dataset(
            self.X[rows], self.z[rows],
            None if self.y is None else self.y[rows],
            self.intercept_col, self.names,
        )


@dataclass
class LossEval:
    value: float
    gradient: np.ndarray
    # per-observation (rho_I, rho_R); rho_R is zero for the surrogate loss
    hessian_terms: Optional[tuple] = None

    def hessian(self, X, include_indefinite=True):
        """Materialise the p x p Hessian from the stored observation weights."""
        if self.hessian_terms is None:
            raise NoisyGLMError("loss was evaluated without hessian terms")
        w_i, w_r = self.hessian_terms
        w = w_i + w_r if include_indefinite else w_i
        return (X.T * w) @ X / X.shape[0]


def _check_beta(beta, X):
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != X.shape[1]:
        raise DimensionError(f"beta has length {beta.shape[0]} but X has {X.shape[1]} columns")
    return beta


def lik_pointwise(t, z, nm):
    """Per-observation ``(l, l', rho_I, rho_R)`` of the likelihood loss."""
    return kernels.lik_terms(t, z, nm.a, nm.b, nm.rho1)


def sur_pointwise(t, z, nm):
    """Per-observation ``(l_s, l_s', A'')`` of the surrogate loss."""
    return kernels.sur_terms(t, surrogate_target(z, nm))


def loss_lik(beta, data, nm, hessian=False, t=None):
    """Negative log-likelihood of the observed labels and its gradient.

    ``t`` may be passed when ``X @ beta`` is already available.
    """
    X = data.X
    beta = _check_beta(beta, X)
    if t is None:
        t = X @ beta
    val, d1, w_i, w_r = kernels.lik_terms(t, data.z, nm.a, nm.b, nm.rho1)
    n = X.shape[0]
    out = LossEval(float(np.sum(val)) / n, X.T @ d1 / n)
    if hessian:
        out.hessian_terms = (w_i, w_r)
    return out


def loss_sur(beta, data, nm, hessian=False, t=None):
    """Convex surrogate ``mean(A(t) - T(z) t)`` and its gradient."""
    X = data.X
    beta = _check_beta(beta, X)
    if t is None:
        t = X @ beta
    val, d1, w = kernels.sur_terms(t, surrogate_target(data.z, nm))
    n = X.shape[0]
    out = LossEval(float(np.sum(val)) / n, X.T @ d1 / n)
    if hessian:
        out.hessian_terms = (w, np.zeros_like(w))
    return out


def loss_value(kind, t, z, nm):
    """Mean loss of kind ``kind`` at linear predictor ``t`` (no gradient)."""
    if kind == LIKELIHOOD:
        val = kernels.lik_terms(t, z, nm.a, nm.b, nm.rho1)[0]
    elif kind == SURROGATE:
        val = kernels.sur_terms(t, surrogate_target(z, nm))[0]
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return float(np.sum(val)) / len(val)


def get_loss(kind):
    if kind == LIKELIHOOD:
        return loss_lik
    if kind == SURROGATE:
        return loss_sur
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def clean_loss(beta, X, y):
    """Logistic loss on clean labels, ``mean(A(x'beta) - y x'beta)``."""
    t = np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)
    return float(np.mean(np.logaddexp(0.0, t) - np.asarray(y, dtype=float) * t))


def unbiasedness_check(beta, data, nm, n_draws=10_000, seed=0):
    """Gap between the surrogate loss averaged over fresh label flips and the clean loss.

    ``data.y`` holds the clean labels; ``n_draws`` independent noisy label
    vectors are drawn from it. Returns ``(gap, mc_se)`` where ``mc_se`` is the
    Monte-Carlo standard error of the averaged surrogate loss.
    """
    from .simgen import flip_labels

    if data.y is None:
        raise NoisyGLMError("unbiasedness_check needs clean labels y")
    beta = _check_beta(beta, data.X)
    target = clean_loss(beta, data.X, data.y)
    if nm.is_clean:
        return abs(loss_sur(beta, Dataset(data.X, data.y), nm).value - target), 0.0
    t = data.X @ beta
    rng = np.random.default_rng(seed)
    vals = np.empty(n_draws)
    for r in range(n_draws):
        z = flip_labels(data.y, nm, rng)
        vals[r] = loss_value(SURROGATE, t, z, nm)
    return abs(vals.mean() - target), vals.std(ddof=1) / np.sqrt(n_draws)

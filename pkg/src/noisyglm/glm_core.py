"""Logistic GLM under class-conditional label noise.

With ``y ~ Bernoulli(mu(t))`` and labels flipped 1->0 with probability
``rho1`` and 0->1 with probability ``rho0``, the observed label satisfies
``E[z | x] = a * mu(t) + b`` with ``a = 1 - rho0 - rho1`` and ``b = rho0``.
Reparametrising the Bernoulli likelihood of ``z`` by its natural parameter
gives ``h_LN(t) = logit(a * mu(t) + b)``.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from . import kernels
from .errors import DomainError

_LINK_CLAMP = 1e-12


@dataclass(frozen=True)
class NoiseModel:
    """Known flip probabilities ``rho0 = P(z=1|y=0)`` and ``rho1 = P(z=0|y=1)``."""

    rho0: float = 0.0
    rho1: float = 0.0
    a: float = field(init=False, repr=False)
    b: float = field(init=False, repr=False)

    def __post_init__(self):
        rho0, rho1 = float(self.rho0), float(self.rho1)
        if not (np.isfinite(rho0) and np.isfinite(rho1)):
            raise DomainError("noise rates must be finite")
        if rho0 < 0 or rho1 < 0:
            raise DomainError(f"noise rates must be nonnegative, got rho0={rho0}, rho1={rho1}")
        if rho0 + rho1 >= 1:
            raise DomainError(f"need rho0 + rho1 < 1, got {rho0 + rho1}")
        object.__setattr__(self, "rho0", rho0)
        object.__setattr__(self, "rho1", rho1)
        object.__setattr__(self, "a", 1.0 - rho1 - rho0)
        object.__setattr__(self, "b", rho0)

    @property
    def is_clean(self):
        return self.rho0 == 0.0 and self.rho1 == 0.0

    def to_dict(self):
        return {"rho0": self.rho0, "rho1": self.rho1}


@dataclass(frozen=True)
class DerivativeBundle:
    """``h_LN`` and its first three derivatives at the requested points."""

    h: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray


def _maybe_scalar(x, like):
    return float(x) if np.ndim(like) == 0 else x


def log1pexp(t):
    """Cumulant function ``A(t) = log(1 + e^t)`` of the Bernoulli family."""
    return np.logaddexp(0.0, t)


def mean_y(t):
    """Clean-label mean ``mu(t) = 1 / (1 + exp(-t))``."""
    return expit(t)


def mean_z(t, nm):
    """Observed-label mean ``a * mu(t) + b``."""
    return nm.a * expit(t) + nm.b


def link_ln(mu_z, nm):
    """Label-noise link: inverse of :func:`mean_z`.

    Raises
    ------
    DomainError
        If any ``mu_z`` lies outside the open interval ``(b, a + b)``.
    """
    mu_z = np.asarray(mu_z, dtype=float)
    lo, hi = nm.b, nm.a + nm.b
    if np.any(~np.isfinite(mu_z)) or np.any(mu_z <= lo) or np.any(mu_z >= hi):
        raise DomainError(f"mu_z must lie strictly inside ({lo}, {hi})")
    u = np.clip((mu_z - nm.b) / nm.a, _LINK_CLAMP, 1.0 - _LINK_CLAMP)
    out = np.log(u) - np.log1p(-u)
    return _maybe_scalar(out, mu_z)


def h_ln(t, nm):
    """Return a :class:`DerivativeBundle` for ``h_LN`` at ``t``.

    Closed forms for the derivatives, with ``m = a*mu + b``::

        h'   = a mu (1 - mu) / (m (1 - m))
        h''  = h' (1 - 2 mu) - h'^2 (1 - 2m)
        h''' = h'' (1 - 2 mu - 2 h' (1 - 2m)) - 2 mu (1 - mu) h' (1 - a h')
    """
    t_arr = np.asarray(t, dtype=float)
    h, h1, h2, h3 = kernels.h_terms(t_arr, nm.a, nm.b, nm.rho1)
    if t_arr.ndim == 0:
        return DerivativeBundle(float(h), float(h1), float(h2), float(h3))
    return DerivativeBundle(h, h1, h2, h3)


def surrogate_target(z, nm):
    """Unbiased transform ``T(z) = (z - b) / a`` with ``E[T(z)|x] = mu(x'beta)``."""
    out = (np.asarray(z, dtype=float) - nm.b) / nm.a
    return _maybe_scalar(out, z)


def variance_ratio(t, nm):
    """``V(mu(t)) / V(mu_z(t))`` with ``V(u) = u (1 - u)``; identically 1 without noise."""
    t = np.asarray(t, dtype=float)
    lmu, lmubar = log_expit(t), log_expit(-t)
    mu, mubar = np.exp(lmu), np.exp(lmubar)
    m = nm.a * mu + nm.b
    q = nm.a * mubar + nm.rho1
    # mu*mubar/(m*q) = (mu/m) * (mubar/q); each factor stays finite in the tails
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(nm.b > 0, mu / m, 1.0 / nm.a)
        r2 = np.where(nm.rho1 > 0, mubar / q, 1.0 / nm.a)
    return _maybe_scalar(r1 * r2, t)


def var_y(t):
    t = np.asarray(t, dtype=float)
    return np.exp(log_expit(t) + log_expit(-t))


def var_z(t, nm):
    t = np.asarray(t, dtype=float)
    m = nm.a * expit(t) + nm.b
    q = nm.a * expit(-t) + nm.rho1
    return m * q

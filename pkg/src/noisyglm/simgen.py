"""Synthetic designs, labels and label-noise corruption.

Every generator is a deterministic function of its inputs and a seed. Seeds
may be an int, a :class:`numpy.random.SeedSequence` or a
:class:`numpy.random.Generator`. Replication ``r`` of a study draws from
``seed_stream(master_seed, r, ...)`` so results do not depend on the order in
which replications are executed.
"""
from dataclasses import asdict, dataclass, field, replace
from typing import Union

import numpy as np
from scipy.special import expit

from .errors import DomainError
from .glm_core import NoiseModel

RNG_ALGORITHM = "numpy.random.PCG64"

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


def seed_stream(master_seed, *keys):
    """Independent seed sequence for the sub-stream identified by ``keys``."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))


def child_seed(ss, key):
    """Child of ``ss`` keyed by ``key``; unlike ``ss.spawn`` this does not mutate ``ss``."""
    return np.random.SeedSequence(entropy=ss.entropy, spawn_key=tuple(ss.spawn_key) + (int(key),))


def as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class AR1Cov:
    """Covariance ``scale * rho^|i-j|``."""

    rho: float = 0.2
    scale: float = 1.0

    def __post_init__(self):
        if not -1 < self.rho < 1:
            raise DomainError(f"ar1 rho must lie in (-1, 1), got {self.rho}")
        if not self.scale > 0:
            raise DomainError("ar1 scale must be positive")

    def matrix(self, p):
        idx = np.arange(p)
        return self.scale * self.rho ** np.abs(idx[:, None] - idx[None, :])

    def quad_form(self, v):
        """``v' Sigma v`` without forming Sigma (O(p^2) only through a Toeplitz sum)."""
        v = np.asarray(v, dtype=float)
        total = v @ v
        for lag in range(1, len(v)):
            c = self.rho ** lag
            if c == 0.0:
                break
            total += 2.0 * c * (v[lag:] @ v[:-lag])
        return self.scale * total


@dataclass(frozen=True)
class DesignSpec:
    """Rows drawn from ``0.5 N(d 1, Sigma) + 0.5 N(-d 1, Sigma)`` (or ``N(0, Sigma)``)."""

    n: int
    p: int
    kind: str = "gaussian_mixture"
    d: float = 0.0
    cov: AR1Cov = field(default_factory=AR1Cov)
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise DomainError("n and p must be positive")
        if self.kind not in ("gaussian_mixture", "gaussian"):
            raise DomainError(f"unknown design kind {self.kind!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        cov = d.pop("cov", None)
        if isinstance(cov, dict):
            cov = AR1Cov(**cov)
        return cls(cov=cov if cov is not None else AR1Cov(), **d)


@dataclass(frozen=True)
class PuSpec:
    """Positive-unlabeled sampling: ``pi = P(y=1 | z=0)`` and the two sample sizes."""

    pi: float
    n_labeled: int
    n_unlabeled: int

    def __post_init__(self):
        if not 0 < self.pi < 1:
            raise DomainError("pi must lie in (0, 1)")
        if self.n_labeled <= 0 or self.n_unlabeled <= 0:
            raise DomainError("sample counts must be positive")


def _ar1_filter(E, cov):
    # X = E L' with L the Cholesky factor of the AR(1) matrix, applied via
    # its closed form: column j is rho * column (j-1) + sqrt(1-rho^2) * e_j
    X = np.empty_like(E)
    X[:, 0] = E[:, 0]
    s = np.sqrt(1.0 - cov.rho ** 2)
    for j in range(1, E.shape[1]):
        X[:, j] = cov.rho * X[:, j - 1] + s * E[:, j]
    return X * np.sqrt(cov.scale)


def gen_design(spec, seed=None):
    """Draw the n x p design described by ``spec`` (seed defaults to ``spec.seed``)."""
    rng = as_generator(spec.seed if seed is None else seed)
    E = rng.standard_normal((spec.n, spec.p))
    X = _ar1_filter(E, spec.cov)
    if spec.kind == "gaussian_mixture" and spec.d != 0.0:
        sign = np.where(rng.random(spec.n) < 0.5, 1.0, -1.0)
        X += spec.d * sign[:, None]
    return X


def gen_labels(X, beta0, seed):
    """Clean labels ``y_i ~ Bernoulli(mu(x_i' beta0))``."""
    X = np.asarray(X, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    if X.shape[1] != beta0.shape[0]:
        raise DomainError("X and beta0 dimensions disagree")
    rng = as_generator(seed)
    return (rng.random(X.shape[0]) < expit(X @ beta0)).astype(float)


def flip_labels(y, nm, seed):
    """Observed labels: flip 1->0 w.p. ``rho1`` and 0->1 w.p. ``rho0``, independently."""
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("y must be binary")
    rng = as_generator(seed)
    u = rng.random(y.shape[0])
    flip = np.where(y == 1, u < nm.rho1, u < nm.rho0)
    return np.where(flip, 1.0 - y, y)


def pu_noise_rates(spec):
    """Noise model implied by PU sampling: ``rho0 = 0``, ``rho1 = pi n_u / (n_l + pi n_u)``."""
    pn = spec.pi * spec.n_unlabeled
    return NoiseModel(0.0, pn / (spec.n_labeled + pn))


def case_control_gamma(spec):
    """Intercept shift ``log(1 + n_l / (pi n_u))`` under case-control PU sampling."""
    return float(np.log1p(spec.n_labeled / (spec.pi * spec.n_unlabeled)))


def scale_covariance_for_signal(cov, beta0, target_var):
    """Rescale ``cov`` so that ``beta0' Sigma beta0 = target_var``.

    ``cov`` may be an :class:`AR1Cov` or a dense covariance matrix; the
    return value has the same type.
    """
    beta0 = np.asarray(beta0, dtype=float)
    if not np.any(beta0):
        raise DomainError("beta0 must be nonzero to scale the signal variance")
    if isinstance(cov, AR1Cov):
        current = cov.quad_form(beta0)
        return replace(cov, scale=cov.scale * target_var / current)
    cov = np.asarray(cov, dtype=float)
    return cov * (target_var / float(beta0 @ cov @ beta0))


def simulate(design, beta0, nm, seed):
    """Design, clean labels and noisy labels from three independent sub-streams."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_x, s_y, s_z = (child_seed(ss, k) for k in range(3))
    X = gen_design(design, s_x)
    y = gen_labels(X, beta0, s_y)
    z = flip_labels(y, nm, s_z)
    return X, y, z

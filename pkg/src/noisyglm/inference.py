"""Asymptotic efficiency diagnostics and confidence intervals.

``W_y = V(mu)`` and ``W_z = V(mu_z)`` are the clean and observed-label
variance weights at ``t = X beta``. The likelihood estimator has information
``a^2 X' diag(W_y^2 / W_z) X / n``; the surrogate estimator has the sandwich
form ``a^2 G_y G_z^{-1} G_y`` with ``G_. = X' W_. X / n``.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.special import log_expit
from scipy.stats import norm

from . import kernels
from .errors import DimensionError, NoisyGLMError, RankDeficiencyError, SolverError
from .glm_core import surrogate_target

PSI_LIK = "psi_lik"
PSI_SUR = "psi_sur"

_RANK_TOL = 1e-10


@dataclass
class InfoPair:
    I_lik: np.ndarray
    I_sur: np.ndarray
    amse_lik: float
    amse_sur: float
    rel_l2_diff: float
    gap: float
    n: int

    @property
    def gap2(self):
        return self.gap ** 2


@dataclass(frozen=True)
class PsiSpec:
    """Estimating function of one of the two losses, split as ``psi' = psi'_I + psi'_R``."""

    kind: str
    nm: object

    def __post_init__(self):
        if self.kind not in (PSI_LIK, PSI_SUR):
            raise NoisyGLMError(f"unknown psi kind {self.kind!r}")

    @classmethod
    def from_loss(cls, loss_kind, nm):
        return cls(PSI_LIK if loss_kind == "likelihood" else PSI_SUR, nm)

    def _terms(self, t, z):
        nm = self.nm
        if self.kind == PSI_LIK:
            _, d1, w_i, w_r = kernels.lik_terms(t, z, nm.a, nm.b, nm.rho1)
            return d1, w_i, w_r
        _, d1, w = kernels.sur_terms(t, surrogate_target(z, nm))
        return d1, w, np.zeros_like(w)

    def psi(self, t, z):
        return self._terms(np.asarray(t, dtype=float), z)[0]

    def psi_I(self, t):
        t = np.asarray(t, dtype=float)
        # psi'_I does not depend on z
        return self._terms(t, np.zeros_like(t))[1]

    def psi_R(self, t, z):
        return self._terms(np.asarray(t, dtype=float), z)[2]

    def psi_n(self, beta, X, z):
        """Empirical estimating equation ``(1/n) sum psi(x_i' beta, z_i) x_i``."""
        return X.T @ self.psi(X @ beta, z) / X.shape[0]


@dataclass
class DebiasReport:
    beta_hat: np.ndarray
    beta_db: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    alpha: float
    theta_diag: Optional[dict] = None


def normal_quantile(alpha):
    """Two-sided critical value ``z_{1 - alpha/2}``."""
    if not 0 < alpha < 1:
        raise NoisyGLMError("alpha must lie in (0, 1)")
    return float(norm.ppf(1.0 - alpha / 2.0))


def deficient_columns(X, tol=_RANK_TOL):
    """Indices of columns that are (numerically) linear combinations of earlier-pivoted ones."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] == 0:
        return []
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return sorted(int(j) for j in piv)
    rank = int(np.sum(d > tol * d[0]))
    if X.shape[0] < X.shape[1]:
        rank = min(rank, X.shape[0])
    return sorted(int(j) for j in piv[rank:])


def _check_rank(X):
    bad = deficient_columns(X)
    if bad or X.shape[0] < X.shape[1]:
        raise RankDeficiencyError(f"design is rank deficient; offending columns {bad}", columns=bad)


def _orth_basis(A):
    A = np.asarray(A, dtype=float)
    Q, R = np.linalg.qr(A)
    d = np.abs(np.diag(R))
    if d.size and (d.min() <= _RANK_TOL * d.max() or A.shape[0] < A.shape[1]):
        bad = deficient_columns(A)
        raise RankDeficiencyError(f"matrix is rank deficient; offending columns {bad}", columns=bad)
    return Q


def subspace_gap(A, B):
    """Operator-norm distance ``||P_A - P_B||_2`` between the column spaces of ``A`` and ``B``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[0] != B.shape[0]:
        raise DimensionError("A and B must have the same number of rows")
    Qa, Qb = _orth_basis(A), _orth_basis(B)
    if Qa.shape[1] != Qb.shape[1]:
        return 1.0
    # for equal dimensions this is the sine of the largest principal angle
    resid = Qb - Qa @ (Qa.T @ Qb)
    return float(min(1.0, np.linalg.norm(resid, 2)))


def variance_weights(X, beta, nm):
    """``(W_y, W_z)`` at ``t = X beta``."""
    t = np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)
    lmu, lmubar = log_expit(t), log_expit(-t)
    w_y = np.exp(lmu + lmubar)
    mu, mubar = np.exp(lmu), np.exp(lmubar)
    w_z = (nm.a * mu + nm.b) * (nm.a * mubar + nm.rho1)
    return w_y, w_z


def _sym(M):
    return 0.5 * (M + M.T)


def _gram(X, w):
    return _sym((X.T * w) @ X / X.shape[0])


def _inv_sqrt(M):
    vals, vecs = np.linalg.eigh(M)
    if vals.min() <= 0:
        raise RankDeficiencyError("information matrix is not positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.T


def _check_design(X, beta):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    beta = np.asarray(beta, dtype=float).ravel()
    if X.shape[1] != beta.shape[0]:
        raise DimensionError(f"X has {X.shape[1]} columns but beta has length {beta.shape[0]}")
    return X, beta


def info_matrices(X, beta, nm):
    """Information matrices of both estimators with their efficiency summaries.

    Raises
    ------
    RankDeficiencyError
        If ``X`` is not of full column rank; ``columns`` names the offenders.
    """
    X, beta = _check_design(X, beta)
    _check_rank(X)
    n = X.shape[0]
    w_y, w_z = variance_weights(X, beta, nm)
    a2 = nm.a ** 2
    I_lik = a2 * _gram(X, w_y ** 2 / w_z)
    G_y, G_z = _gram(X, w_y), _gram(X, w_z)
    try:
        cz = scipy.linalg.cho_factor(G_z)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"weighted Gram matrix is singular: {exc}") from exc
    I_sur = a2 * _sym(G_y @ scipy.linalg.cho_solve(cz, G_y))

    R = _inv_sqrt(I_lik)
    M = _sym(R @ I_sur @ R)
    rd = float(np.max(np.abs(np.linalg.eigvalsh(np.eye(X.shape[1]) - M))))

    amse_lik = float(np.trace(np.linalg.inv(I_lik))) / n
    amse_sur = float(np.trace(np.linalg.inv(I_sur))) / n
    gap = subspace_gap(X, X * (w_y / w_z)[:, None])
    return InfoPair(I_lik, I_sur, amse_lik, amse_sur, rd, gap, n)


def _cond(v):
    v = np.asarray(v, dtype=float)
    return float(v.max() / v.min())


def cor1_bound_check(X, beta0, nm):
    """Return ``(rd, c_n * gap^2)`` where ``c_n = kappa(X'X/n) kappa(W_y^2) kappa(W_z^2)``."""
    X, beta0 = _check_design(X, beta0)
    info = info_matrices(X, beta0, nm)
    w_y, w_z = variance_weights(X, beta0, nm)
    ev = np.linalg.eigvalsh(_gram(X, np.ones(X.shape[0])))
    c_n = float(ev[-1] / ev[0]) * _cond(w_y ** 2) * _cond(w_z ** 2)
    return info.rel_l2_diff, c_n * info.gap ** 2


def weighted_gram(X, beta, psi):
    """``psi'_{I,n}(beta) = (1/n) sum psi'_I(x_i' beta) x_i x_i'``."""
    X, beta = _check_design(X, beta)
    return _gram(X, psi.psi_I(X @ beta))


def default_nodewise_lambda(X, beta_hat, psi):
    """Shared node-wise penalty ``0.5 sqrt(log p / n)`` times the root mean weighted column variance."""
    X, beta_hat = _check_design(X, beta_hat)
    n, p = X.shape
    S = weighted_gram(X, beta_hat, psi)
    return 0.5 * np.sqrt(np.log(max(p, 2)) / n) * np.sqrt(np.mean(np.diag(S)))


def nodewise_theta(X, beta_hat, psi, lambdas=None, max_sweeps=10_000, tol=1e-10):
    """Approximate inverse of the weighted Gram matrix by node-wise lasso.

    Column ``j`` regresses ``W^{1/2} X_j`` on the remaining weighted columns
    with penalty ``lambdas[j]``; the lasso is solved in Gram form by
    coordinate descent. Returns ``(Theta, diag)`` where ``diag`` holds arrays
    ``tau2``, ``kkt`` (``||e_j - S Theta_j||_inf``), ``theta_l1`` and
    ``lam``.
    """
    X, beta_hat = _check_design(X, beta_hat)
    p = X.shape[1]
    S = weighted_gram(X, beta_hat, psi)
    if lambdas is None:
        lambdas = np.full(p, default_nodewise_lambda(X, beta_hat, psi))
    lambdas = np.broadcast_to(np.asarray(lambdas, dtype=float), (p,)).copy()
    if np.any(lambdas <= 0):
        raise NoisyGLMError("node-wise penalties must be positive")

    Theta = np.zeros((p, p))
    tau2 = np.empty(p)
    converged = np.empty(p, dtype=bool)
    idx = np.arange(p)
    for j in range(p):
        rest = idx != j
        G = np.ascontiguousarray(S[np.ix_(rest, rest)])
        c = np.ascontiguousarray(S[rest, j])
        gamma = np.zeros(p - 1)
        _, ok = kernels.lasso_cd_gram(G, c, float(lambdas[j]), gamma, max_sweeps, tol)
        converged[j] = ok
        resid = S[j, j] - 2.0 * c @ gamma + gamma @ G @ gamma
        t2 = resid + lambdas[j] * np.abs(gamma).sum()
        if not t2 > 0:
            raise RankDeficiencyError(f"column {j} has zero weighted residual variance", columns=[j])
        tau2[j] = t2
        row = np.empty(p)
        row[rest] = -gamma
        row[j] = 1.0
        Theta[j] = row / t2

    E = np.eye(p) - Theta @ S
    diag = {
        "tau2": tau2,
        "kkt": np.max(np.abs(E), axis=1),
        "theta_l1": np.abs(Theta).sum(axis=1),
        "lam": lambdas,
        "converged": converged,
    }
    return Theta, diag


def inverse_hessian_theta(X, beta_hat, psi, z=None):
    """Exact inverse of the Hessian ``psi'_n``; with ``z=None`` only the ``psi'_I`` part is used."""
    X, beta_hat = _check_design(X, beta_hat)
    t = X @ beta_hat
    w = psi.psi_I(t)
    if z is not None:
        w = w + psi.psi_R(t, z)
    H = _gram(X, w)
    try:
        return scipy.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        bad = deficient_columns(X)
        raise RankDeficiencyError(f"Hessian is singular; offending columns {bad}", columns=bad) from exc


def _report(beta_hat, beta_db, se, alpha, theta_diag=None):
    if not np.all(np.isfinite(se)) or np.any(se <= 0):
        raise SolverError("standard errors are not positive and finite; plug-in is singular")
    q = normal_quantile(alpha)
    return DebiasReport(beta_hat, beta_db, se, beta_db - q * se, beta_db + q * se, alpha, theta_diag)


def debias(data, nm, beta_hat, psi, Theta_hat, alpha=0.05, theta_diag=None):
    """One-step correction ``beta_hat - Theta psi_n(beta_hat)`` with sandwich standard errors."""
    X, beta_hat = _check_design(data.X, beta_hat)
    p = X.shape[1]
    Theta_hat = np.asarray(Theta_hat, dtype=float)
    if Theta_hat.shape != (p, p):
        raise DimensionError(f"Theta_hat must be {p} x {p}, got {Theta_hat.shape}")
    if psi.nm != nm:
        psi = PsiSpec(psi.kind, nm)
    n = X.shape[0]
    ps = psi.psi(X @ beta_hat, data.z)
    psi_n = X.T @ ps / n
    if not np.all(np.isfinite(psi_n)):
        raise NoisyGLMError("estimating equation is not finite at beta_hat")
    beta_db = beta_hat - Theta_hat @ psi_n
    S = _gram(X, ps ** 2)
    V = np.einsum("ij,jk,ik->i", Theta_hat, S, Theta_hat)
    se = np.sqrt(np.maximum(V, 0.0) / n)
    return _report(beta_hat, beta_db, se, alpha, theta_diag)


def wald_intervals(data, nm, beta_hat, loss_kind, alpha=0.05):
    """Intervals for an unpenalised estimate from the plug-in information ``I_n(beta_hat)``."""
    X, beta_hat = _check_design(data.X, beta_hat)
    info = info_matrices(X, beta_hat, nm)
    I = info.I_lik if loss_kind == "likelihood" else info.I_sur
    cov = scipy.linalg.inv(I) / X.shape[0]
    se = np.sqrt(np.diag(cov))
    return _report(beta_hat, beta_hat.copy(), se, alpha)

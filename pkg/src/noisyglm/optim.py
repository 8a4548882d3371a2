"""Proximal-gradient solvers for the likelihood and surrogate estimators.

Both estimators minimise ``L(beta) + lam * ||beta_P||_1`` where ``P`` are the
penalised coordinates; the likelihood estimator is additionally restricted to
the Euclidean ball of radius ``radius``. The prox of the l1 term plus the
ball indicator is soft-thresholding followed by projection onto the ball.
"""
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimensionError, NoisyGLMError, SolverError, UnboundedObjectiveError
from .losses import LIKELIHOOD, LOSS_KINDS, SURROGATE, loss_value
from .glm_core import surrogate_target
from . import kernels

GRADMAP_TOL = "gradmap_tol"
OBJ_TOL = "obj_tol"
MAX_ITER = "max_iter"

_MIN_STEP = 1e-20
# iterates shorter than this are not tested for a descent direction at infinity
_RECESSION_CHECK_NORM = 10.0


@dataclass(frozen=True)
class FitConfig:
    """Solver and penalty settings.

    ``init`` is ``"zeros"``, ``"convex"`` (start from the surrogate estimate
    with the same penalty) or an explicit starting vector. ``tol_gradmap``
    defaults to ``1e-6 * sqrt(p)`` when left as ``None``.

    ``step_rule`` picks the first trial step of each backtracking search:
    ``"carry"`` reuses the last accepted step (so steps never grow), while
    ``"bb"`` uses the Barzilai-Borwein step from the last two iterates. Both
    accept only steps that pass the sufficient-decrease test. An iterate with
    l2 norm above ``divergence_norm`` is taken as evidence that the objective
    is unbounded below (the surrogate can be, on nearly separable data).
    """

    loss_kind: str = SURROGATE
    lam: float = 0.0
    radius: Optional[float] = None
    unpenalized: Sequence[int] = ()
    init: Union[str, np.ndarray] = "zeros"
    max_iter: int = 10_000
    tol_obj: float = 1e-10
    tol_gradmap: Optional[float] = None
    backtrack_shrink: float = 0.5
    step_init: float = 1.0
    step_rule: str = "bb"
    divergence_norm: float = 1e6

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise NoisyGLMError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.lam < 0 or not np.isfinite(self.lam):
            raise NoisyGLMError("lam must be a finite nonnegative number")
        if self.radius is not None:
            if self.loss_kind != LIKELIHOOD:
                raise NoisyGLMError("radius applies only to the likelihood loss")
            if not self.radius > 0:
                raise NoisyGLMError("radius must be positive")
        if not 0 < self.backtrack_shrink < 1:
            raise NoisyGLMError("backtrack_shrink must lie in (0, 1)")
        if self.step_init <= 0 or self.max_iter < 1 or self.tol_obj < 0:
            raise NoisyGLMError("step_init, max_iter must be positive and tol_obj nonnegative")
        if self.tol_gradmap is not None and self.tol_gradmap <= 0:
            raise NoisyGLMError("tol_gradmap must be positive")
        if self.step_rule not in ("bb", "carry"):
            raise NoisyGLMError("step_rule must be 'bb' or 'carry'")
        if isinstance(self.init, str) and self.init not in ("zeros", "convex"):
            raise NoisyGLMError(f"unknown init {self.init!r}")


@dataclass
class FitResult:
    beta: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    termination: str
    active_set: np.ndarray
    gradmap_norm: float
    loss_kind: str
    lam: float
    radius: Optional[float] = None
    unpenalized: tuple = field(default_factory=tuple)

    @property
    def converged(self):
        return self.termination != MAX_ITER


def prox_l1(v, threshold, unpenalized=()):
    """Soft-threshold ``v`` by ``threshold``, leaving ``unpenalized`` indices untouched."""
    if threshold < 0:
        raise NoisyGLMError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    out = np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)
    if len(unpenalized):
        idx = np.asarray(unpenalized, dtype=int)
        out[idx] = v[idx]
    return out


def project_l2_ball(v, r):
    """Euclidean projection of ``v`` onto ``{x : ||x||_2 <= r}``."""
    if not r > 0:
        raise NoisyGLMError("radius must be positive")
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= r:
        return v.copy()
    return v * (r / norm)


def _penalty_mask(p, unpenalized, intercept_col):
    mask = np.ones(p)
    idx = list(unpenalized)
    if intercept_col is not None:
        idx.append(intercept_col)
    if idx:
        idx = np.asarray(idx, dtype=int)
        if idx.min() < 0 or idx.max() >= p:
            raise DimensionError("unpenalized index out of range")
        mask[idx] = 0.0
    return mask


def unpenalized_indices(data, cfg):
    mask = _penalty_mask(data.p, cfg.unpenalized, data.intercept_col)
    return tuple(int(i) for i in np.flatnonzero(mask == 0))


class _Objective:
    """Smooth part of the objective evaluated from the linear predictor."""

    def __init__(self, kind, data, nm):
        self.kind = kind
        self.X = data.X
        self.n = data.n
        self.a, self.b, self.rho1 = nm.a, nm.b, nm.rho1
        self.z = data.z
        self.tz = surrogate_target(data.z, nm) if kind == SURROGATE else None

    def pointwise(self, t):
        if self.kind == LIKELIHOOD:
            val, d1, _, _ = kernels.lik_terms(t, self.z, self.a, self.b, self.rho1)
        else:
            val, d1, _ = kernels.sur_terms(t, self.tz)
        return float(np.sum(val)) / self.n, d1

    def linpred(self, beta):
        nz = np.flatnonzero(beta)
        if len(nz) * 3 < len(beta):
            return self.X[:, nz] @ beta[nz]
        return self.X @ beta

    def gradient(self, d1):
        return self.X.T @ d1 / self.n

    def recession_slope(self, t, norm):
        """Slope at infinity of the surrogate along ``beta / ||beta||`` (``t = X beta``).

        A negative value certifies that the convex objective is unbounded
        below in that direction.
        """
        return float(np.sum(np.maximum(t, 0.0) - self.tz * t)) / (self.n * norm)


def _default_radius(data, nm, cfg):
    try:
        sur = fit(data, nm, replace(cfg, loss_kind=SURROGATE, radius=None, init="zeros"))
    except SolverError as exc:
        raise SolverError(f"cannot derive a default radius from the surrogate fit ({exc}); "
                          "pass an explicit radius") from exc
    return 100.0 * max(1.0, float(np.linalg.norm(sur.beta))), sur


def fit(data, nm, cfg=FitConfig()):
    """Minimise the penalised loss selected by ``cfg`` by proximal gradient descent.

    Each step soft-thresholds (and, for the likelihood loss, projects) a
    gradient step whose length is found by backtracking from the previous
    accepted step. Iteration stops when the gradient-map norm drops below
    ``tol_gradmap``, when the relative objective decrease drops below
    ``tol_obj``, or after ``max_iter`` steps.

    Raises
    ------
    SolverError
        If the objective is non-finite at the start or no step length gives
        a finite, decreasing objective.
    """
    X = data.X
    n, p = X.shape
    mask = _penalty_mask(p, cfg.unpenalized, data.intercept_col)
    unpen = tuple(int(i) for i in np.flatnonzero(mask == 0))
    tol_gm = cfg.tol_gradmap if cfg.tol_gradmap is not None else 1e-6 * np.sqrt(p)

    radius = cfg.radius
    convex = None
    if cfg.loss_kind == LIKELIHOOD and radius is None:
        radius, convex = _default_radius(data, nm, cfg)

    if isinstance(cfg.init, str):
        if cfg.init == "convex" and cfg.loss_kind == LIKELIHOOD:
            if convex is None:
                convex = fit(data, nm, replace(cfg, loss_kind=SURROGATE, radius=None, init="zeros"))
            beta = convex.beta.copy()
        else:
            beta = np.zeros(p)
    else:
        beta = np.array(cfg.init, dtype=float).ravel()
        if beta.shape[0] != p:
            raise DimensionError(f"init has length {beta.shape[0]}, expected {p}")
    if radius is not None:
        beta = project_l2_ball(beta, radius)

    obj = _Objective(cfg.loss_kind, data, nm)
    lam = float(cfg.lam)
    thresh_w = lam * mask

    def penalty(b):
        return lam * float(np.abs(b[mask > 0]).sum()) if lam > 0 else 0.0

    t = obj.linpred(beta)
    L, d1 = obj.pointwise(t)
    F = L + penalty(beta)
    if not np.isfinite(F):
        raise SolverError("objective is not finite at the initial point")
    grad = obj.gradient(d1)

    trace = [F]
    step = cfg.step_init
    termination = MAX_ITER
    gradmap = np.inf
    it = 0
    while it < cfg.max_iter:
        it += 1
        if cfg.step_rule == "bb" and it > 1:
            dg = grad - grad_prev
            curv = diff @ dg
            if curv > 0:
                step = min(max((diff @ diff) / curv, 1e-10), 1e10)
        grad_prev = grad
        while True:
            v = beta - step * grad
            cand = np.sign(v) * np.maximum(np.abs(v) - step * thresh_w, 0.0)
            if radius is not None:
                cand = project_l2_ball(cand, radius)
            diff = cand - beta
            t_new = obj.linpred(cand)
            L_new, d1_new = obj.pointwise(t_new)
            if np.isfinite(L_new):
                bound = L + grad @ diff + (diff @ diff) / (2.0 * step)
                slack = 1e-14 * max(1.0, abs(L))
                F_new = L_new + penalty(cand)
                if L_new <= bound + slack and F_new <= F + slack:
                    break
            step *= cfg.backtrack_shrink
            if step < _MIN_STEP:
                raise SolverError("backtracking failed: step length underflow")
        gradmap = float(np.linalg.norm(diff)) / step
        beta, t, L, d1 = cand, t_new, L_new, d1_new
        bnorm = np.linalg.norm(beta)
        if bnorm > cfg.divergence_norm:
            raise UnboundedObjectiveError(
                f"iterate norm exceeded {cfg.divergence_norm:g}; the objective appears unbounded below"
            )
        if obj.tz is not None and bnorm > _RECESSION_CHECK_NORM:
            slope = obj.recession_slope(t, bnorm) + penalty(beta) / bnorm
            if slope < -1e-12:
                raise UnboundedObjectiveError(
                    f"surrogate objective is unbounded below (slope {slope:.3g} along the current direction)"
                )
        grad = obj.gradient(d1)
        F_old, F = F, F_new
        trace.append(F)
        if gradmap <= tol_gm:
            termination = GRADMAP_TOL
            break
        if cfg.tol_obj > 0 and abs(F_old - F) <= cfg.tol_obj * max(1.0, abs(F_old)):
            termination = OBJ_TOL
            break

    active = np.flatnonzero(beta)
    return FitResult(
        beta=beta, objective_trace=np.asarray(trace), iterations=it,
        termination=termination, active_set=active, gradmap_norm=gradmap,
        loss_kind=cfg.loss_kind, lam=lam, radius=radius, unpenalized=unpen,
    )


def lambda_max(data, nm, cfg=FitConfig()):
    """Smallest penalty at which every penalised coefficient is zero.

    Computed as the sup-norm of the penalised gradient coordinates at the
    optimum of the model restricted to the unpenalised columns.
    """
    mask = _penalty_mask(data.p, cfg.unpenalized, data.intercept_col)
    beta = np.zeros(data.p)
    unpen = np.flatnonzero(mask == 0)
    if len(unpen):
        from .losses import Dataset
        sub = Dataset(data.X[:, unpen], data.z)
        sub_fit = fit(sub, nm, replace(cfg, lam=0.0, unpenalized=(), init="zeros",
                                        radius=None, tol_gradmap=1e-10, tol_obj=0.0))
        beta[unpen] = sub_fit.beta
    obj = _Objective(cfg.loss_kind, data, nm)
    _, d1 = obj.pointwise(data.X @ beta)
    grad = obj.gradient(d1)
    pen = mask > 0
    return float(np.max(np.abs(grad[pen]))) if pen.any() else 0.0


def lambda_grid(data, nm, cfg=FitConfig(), n_lambda=50, ratio=1e-3):
    """Log-spaced grid from ``lambda_max`` down to ``ratio * lambda_max``."""
    lmax = lambda_max(data, nm, cfg)
    if lmax <= 0:
        raise NoisyGLMError("lambda_max is zero; nothing to penalise")
    return np.geomspace(lmax, lmax * ratio, n_lambda)


def fold_ids(n, folds, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    ids = np.empty(n, dtype=int)
    ids[rng.permutation(n)] = np.arange(n) % folds
    return ids


def fit_path(data, nm, cfg, grid, stop_on_unbounded=False):
    """Warm-started fits along a descending penalty grid.

    With ``stop_on_unbounded`` the path is cut at the first penalty whose
    objective is unbounded below and the fits before it are returned. Smaller
    penalties only lower the objective, so they would be unbounded too.
    """
    fits = []
    init = cfg.init
    for lam in grid:
        try:
            res = fit(data, nm, replace(cfg, lam=float(lam), init=init))
        except UnboundedObjectiveError:
            if not stop_on_unbounded:
                raise
            break
        fits.append(res)
        init = res.beta
    return fits


def _path_radius(data, nm, cfg, grid):
    # default likelihood radius from the largest bounded surrogate fit on the path
    sur = fit_path(data, nm, replace(cfg, loss_kind=SURROGATE, radius=None, init="zeros"), grid,
                   stop_on_unbounded=True)
    if not sur:
        raise UnboundedObjectiveError("surrogate objective is unbounded for every penalty in the grid; "
                                      "pass an explicit radius")
    return 100.0 * max(1.0, max(float(np.linalg.norm(f.beta)) for f in sur))


def cv_select_lambda(data, nm, base_cfg, folds=5, grid=None, seed=0):
    """K-fold cross-validation of the penalty on held-out loss of the same kind.

    Returns ``(lam, cv_curve)``. Among grid values with the minimal mean
    held-out loss the smallest one is chosen. A penalty at which the training
    objective of some fold is unbounded below scores ``inf``.
    """
    if folds < 2:
        raise NoisyGLMError("need at least two folds")
    if grid is None:
        grid = lambda_grid(data, nm, base_cfg)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise NoisyGLMError("lambda grid is empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) > 0):
        raise NoisyGLMError("lambda grid must be positive and sorted descending")
    if grid.size == 1:
        return float(grid[0]), np.zeros(1)

    cfg = base_cfg
    if cfg.loss_kind == LIKELIHOOD and cfg.radius is None:
        cfg = replace(cfg, radius=_path_radius(data, nm, cfg, grid))

    ids = fold_ids(data.n, folds, seed)
    losses = np.full((folds, grid.size), np.inf)
    for k in range(folds):
        train, test = data.subset(ids != k), data.subset(ids == k)
        for j, res in enumerate(fit_path(train, nm, cfg, grid, stop_on_unbounded=True)):
            losses[k, j] = loss_value(cfg.loss_kind, test.X @ res.beta, test.z, nm)
    curve = losses.mean(axis=0)
    if not np.isfinite(curve[0]):
        raise UnboundedObjectiveError("training objective is unbounded below at every penalty in the grid")
    best = np.flatnonzero(curve == curve.min())
    return float(grid[best[-1]]), curve

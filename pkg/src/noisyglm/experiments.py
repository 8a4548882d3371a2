"""Monte-Carlo studies comparing the likelihood and surrogate estimators.

Every replication draws its data from ``seed_stream(seed, grid_index, rep)``,
so tables are identical whatever the number of worker threads. Failed
replications (solver errors or non-convergence) are counted and excluded
from the aggregates rather than aborting the study.
"""
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy.stats import spearmanr

from .errors import NoisyGLMError, UnboundedObjectiveError
from .fileio import now_iso, write_csv, write_manifest
from .glm_core import NoiseModel
from .inference import (
    PsiSpec, debias, info_matrices, inverse_hessian_theta, nodewise_theta, wald_intervals,
)
from .losses import LIKELIHOOD, SURROGATE, Dataset, loss_value
from .optim import FitConfig, _path_radius, cv_select_lambda, fit, fit_path, lambda_grid
from .simgen import (
    AR1Cov, DesignSpec, child_seed, scale_covariance_for_signal, seed_stream, simulate,
)

EFFICIENCY = "efficiency_vs_gap"
NOISE_RATES = "noise_rates"
ESTIMATION = "estimation_error"
SPARSITY = "sparsity_ratio"
COVERAGE = "coverage"
STUDIES = (EFFICIENCY, NOISE_RATES, ESTIMATION, SPARSITY, COVERAGE)

COVERAGE_METHODS = ("logLik", "convex", "logLik_debiased", "convex_debiased")
COVERAGE_COLUMNS = ("coverage_all", "coverage_nzero", "coverage_zero", "ci_length")

_DEFAULTS = {
    EFFICIENCY: dict(n=1000, p=10, grid=(0.0, 0.5, 1.0, 1.5, 2.0, 2.5), B=200),
    NOISE_RATES: dict(n=1000, p=10, grid=(0.05, 0.1, 0.15, 0.2), B=200),
    ESTIMATION: dict(n=1000, p=10, s=10, grid=(1000, 2000, 4000), B=200),
    SPARSITY: dict(n=2000, p=20, grid=tuple(range(1, 21)), B=200, lambda_rule="holdout"),
    COVERAGE: dict(n=2000, p=20, s=10, grid=(2000,), B=100),
}


@dataclass(frozen=True)
class StudySpec:
    """Configuration of one study.

    ``grid`` holds the varied quantity: ``d^2`` for ``efficiency_vs_gap``,
    the noise rate for ``noise_rates`` (``rho0`` with ``rho1`` fixed, or
    both when ``noise_mode="symmetric"``), the sample size for
    ``estimation_error`` and ``coverage``, and the sparsity ``s`` for
    ``sparsity_ratio``. Unset fields take study-specific defaults.
    """

    study: str
    n: Optional[int] = None
    p: Optional[int] = None
    s: Optional[int] = None
    grid: Optional[tuple] = None
    B: Optional[int] = None
    seed: int = 20240101
    rho0: float = 0.1
    rho1: float = 0.05
    noise_mode: str = "rho0"
    d: Optional[float] = None
    ar1_rho: float = 0.2
    signal_var: float = 5.0
    p_equals_n: bool = False
    penalized: Optional[bool] = None
    lambda_rule: Optional[str] = None
    lambda_c: float = 0.5
    cv_folds: int = 5
    n_lambda: int = 50
    alpha: float = 0.05
    fit: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.study not in STUDIES:
            raise NoisyGLMError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        defaults = {"lambda_rule": "cv", **_DEFAULTS[self.study]}
        for k, v in defaults.items():
            if getattr(self, k) is None:
                object.__setattr__(self, k, v)
        object.__setattr__(self, "grid", tuple(self.grid))
        if len(self.grid) == 0:
            raise NoisyGLMError("study grid is empty")
        if self.B < 1:
            raise NoisyGLMError("B must be at least 1")
        if self.noise_mode not in ("rho0", "symmetric"):
            raise NoisyGLMError("noise_mode must be 'rho0' or 'symmetric'")
        if self.lambda_rule not in ("cv", "theory", "holdout"):
            raise NoisyGLMError("lambda_rule must be 'cv', 'theory' or 'holdout'")
        if self.lambda_rule == "holdout" and self.study != SPARSITY:
            raise NoisyGLMError("lambda_rule 'holdout' is only available for the sparsity study")
        if not 0 < self.alpha < 1:
            raise NoisyGLMError("alpha must lie in (0, 1)")
        if self.s is not None and not self.p_equals_n and self.s > self.p:
            raise NoisyGLMError("s cannot exceed p")
        allowed = {f.name for f in fields(FitConfig)} - {"loss_kind", "lam", "init", "radius"}
        bad = set(self.fit) - allowed
        if bad:
            raise NoisyGLMError(f"unsupported fit overrides: {sorted(bad)}")

    def to_dict(self):
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise NoisyGLMError(f"unknown study fields: {sorted(unknown)}")
        if "grid" in d and d["grid"] is not None:
            d["grid"] = tuple(d["grid"])
        return cls(**d)


@dataclass
class StudyResult:
    """Aggregated rows plus per-replication values.

    ``rows`` are ``(grid, metric, mean, std_err, B, failed)``; ``raw`` maps
    ``(grid_index, metric)`` to the array of per-replication values (NaN for
    failed replications).
    """

    spec: StudySpec
    rows: list
    raw: dict
    failures: list
    wall_time: float = 0.0

    def metric(self, name):
        """``(grid, mean, std_err)`` arrays for one metric, in grid order."""
        sel = [r for r in self.rows if r[1] == name]
        if not sel:
            raise KeyError(name)
        return tuple(np.array([r[k] for r in sel], dtype=float) for k in (0, 2, 3))

    def values(self, grid_index, name):
        return self.raw[(grid_index, name)]

    def coverage_table(self):
        if self.spec.study != COVERAGE:
            raise NoisyGLMError("coverage table requires a coverage study")
        out = []
        means = {r[1]: r[2] for r in self.rows if r[0] == self.spec.grid[0]}
        for m in COVERAGE_METHODS:
            if f"{m}_coverage_all" in means:
                out.append([m] + [means[f"{m}_{c}"] for c in COVERAGE_COLUMNS])
        return out


# ----------------------------------------------------------------------------
# per-replication work


def _fit_cfg(spec, **kw):
    return FitConfig(**{**spec.fit, **kw})


def _rep_seed_int(ss, key):
    return int(child_seed(ss, key).generate_state(1)[0])


def _unpenalized_pair(spec, data, nm):
    sur = fit(data, nm, _fit_cfg(spec, loss_kind=SURROGATE))
    r = 100.0 * max(1.0, float(np.linalg.norm(sur.beta)))
    lik = fit(data, nm, _fit_cfg(spec, loss_kind=LIKELIHOOD, radius=r))
    return lik, sur


def _check_converged(*fits):
    for f in fits:
        if not f.converged:
            raise _RepFailure(f"{f.loss_kind} fit hit max_iter")


class _RepFailure(Exception):
    pass


class _PartialFailure(Exception):
    def __init__(self, metrics, reason):
        super().__init__(reason)
        self.metrics = metrics


def _select_lambda(spec, kind, data, nm, ss, test=None):
    n, p = data.X.shape
    if spec.lambda_rule == "theory":
        return spec.lambda_c * math.sqrt(math.log(p) / n)
    cfg = _fit_cfg(spec, loss_kind=kind)
    grid = lambda_grid(data, nm, cfg, n_lambda=spec.n_lambda)
    if spec.lambda_rule == "cv":
        lam, _ = cv_select_lambda(data, nm, cfg, folds=spec.cv_folds, grid=grid,
                                  seed=_rep_seed_int(ss, 10 + (kind == LIKELIHOOD)))
        return lam
    # held-out test set of the same size
    if kind == LIKELIHOOD:
        cfg = replace(cfg, radius=_path_radius(data, nm, cfg, grid))
    path = fit_path(data, nm, cfg, grid, stop_on_unbounded=True)
    if not path:
        raise UnboundedObjectiveError("objective is unbounded below at every penalty in the grid")
    losses = np.array([loss_value(kind, test.X @ f.beta, test.z, nm) for f in path])
    return float(grid[np.flatnonzero(losses == losses.min())[-1]])


def _penalized_pair(spec, data, nm, ss, test=None):
    lam_s = _select_lambda(spec, SURROGATE, data, nm, ss, test)
    lam_l = _select_lambda(spec, LIKELIHOOD, data, nm, ss, test)
    sur = fit(data, nm, _fit_cfg(spec, loss_kind=SURROGATE, lam=lam_s))
    # the convex fit at its own selected penalty is bounded, so it supplies
    # the start and the radius even when the surrogate diverges at lam_l
    r = 100.0 * max(1.0, float(np.linalg.norm(sur.beta)))
    lik = fit(data, nm, _fit_cfg(spec, loss_kind=LIKELIHOOD, lam=lam_l, init=sur.beta, radius=r))
    return lik, sur


def _beta_mixture(p):
    return np.full(p, 1.0 / math.sqrt(p))


def _beta_pm(p, s):
    beta = np.zeros(p)
    h = s // 2
    beta[:h] = 1.0
    beta[h:s] = -1.0
    return beta


def _gaussian_design(spec, n, p, beta0):
    cov = scale_covariance_for_signal(AR1Cov(spec.ar1_rho), beta0, spec.signal_var)
    return DesignSpec(n, p, kind="gaussian", cov=cov)


def _noise_for(spec, g):
    if spec.study == NOISE_RATES:
        return NoiseModel(g, g) if spec.noise_mode == "symmetric" else NoiseModel(g, spec.rho1)
    return NoiseModel(spec.rho0, spec.rho1)


def _rep_efficiency(spec, g, ss):
    nm = _noise_for(spec, g)
    p = spec.p
    if spec.study == EFFICIENCY:
        d = math.sqrt(g)
    else:
        d = spec.d if spec.d is not None else 2.0 / math.sqrt(10.0)
    beta0 = _beta_mixture(p)
    design = DesignSpec(spec.n, p, d=d, cov=AR1Cov(spec.ar1_rho))
    X, _, z = simulate(design, beta0, nm, ss)
    info = info_matrices(X, beta0, nm)
    out = {
        "rd": info.rel_l2_diff,
        "one_minus_rd": 1.0 - info.rel_l2_diff,
        "gap2": info.gap ** 2,
        "amse_lik": info.amse_lik,
        "amse_sur": info.amse_sur,
    }
    # design-only metrics above survive a failed fit
    try:
        lik, sur = _unpenalized_pair(spec, Dataset(X, z), nm)
        _check_converged(lik, sur)
    except (_RepFailure, NoisyGLMError) as exc:
        raise _PartialFailure(out, f"{type(exc).__name__}: {exc}") from exc
    out["mse_lik"] = float(np.sum((lik.beta - beta0) ** 2))
    out["mse_sur"] = float(np.sum((sur.beta - beta0) ** 2))
    return out


def _rep_estimation(spec, g, ss):
    nm = NoiseModel(spec.rho0, spec.rho1)
    n = int(g)
    p = n if spec.p_equals_n else spec.p
    beta0 = _beta_pm(p, spec.s)
    X, _, z = simulate(_gaussian_design(spec, n, p, beta0), beta0, nm, ss)
    data = Dataset(X, z)
    penalized = spec.penalized if spec.penalized is not None else p >= n
    out = {}
    if penalized:
        lik, sur = _penalized_pair(spec, data, nm, ss)
        _check_converged(lik, sur)
        e_l, e_s = np.linalg.norm(lik.beta - beta0), np.linalg.norm(sur.beta - beta0)
        out.update(smse_lik=e_l ** 2, smse_sur=e_s ** 2, l2err_lik=e_l, l2err_sur=e_s,
                   lam_lik=lik.lam, lam_sur=sur.lam)
    else:
        lik, sur = _unpenalized_pair(spec, data, nm)
        _check_converged(lik, sur)
        out.update(mse_lik=float(np.sum((lik.beta - beta0) ** 2)),
                   mse_sur=float(np.sum((sur.beta - beta0) ** 2)))
    return out


def _rep_sparsity(spec, g, ss):
    nm = NoiseModel(spec.rho0, spec.rho1)
    p, s = spec.p, int(g)
    beta0 = np.zeros(p)
    beta0[:s] = 1.0 / math.sqrt(s)
    d = spec.d if spec.d is not None else 3.0 / math.sqrt(p)
    design = DesignSpec(spec.n, p, d=d, cov=AR1Cov(spec.ar1_rho))
    X, _, z = simulate(design, beta0, nm, child_seed(ss, 0))
    data = Dataset(X, z)
    test = None
    if spec.lambda_rule == "holdout":
        Xt, _, zt = simulate(design, beta0, nm, child_seed(ss, 1))
        test = Dataset(Xt, zt)
    lik, sur = _unpenalized_pair(spec, data, nm)
    plik, psur = _penalized_pair(spec, data, nm, ss, test)
    _check_converged(lik, sur, plik, psur)
    return {
        "l1l2_ratio": float(np.abs(beta0).sum() / np.linalg.norm(beta0)),
        "mse_lik": float(np.sum((lik.beta - beta0) ** 2)),
        "mse_sur": float(np.sum((sur.beta - beta0) ** 2)),
        "smse_lik": float(np.sum((plik.beta - beta0) ** 2)),
        "smse_sur": float(np.sum((psur.beta - beta0) ** 2)),
        "lam_lik": plik.lam,
        "lam_sur": psur.lam,
    }


def _coverage_metrics(prefix, rep, beta0):
    cover = (rep.ci_low <= beta0) & (beta0 <= rep.ci_high)
    nz = beta0 != 0
    out = {
        f"{prefix}_coverage_all": float(cover.mean()),
        f"{prefix}_ci_length": float(np.mean(rep.ci_high - rep.ci_low)),
    }
    out[f"{prefix}_coverage_nzero"] = float(cover[nz].mean()) if nz.any() else math.nan
    out[f"{prefix}_coverage_zero"] = float(cover[~nz].mean()) if (~nz).any() else math.nan
    return out


def _rep_coverage(spec, g, ss):
    nm = NoiseModel(spec.rho0, spec.rho1)
    n = int(g)
    p = n if spec.p_equals_n else spec.p
    beta0 = _beta_pm(p, spec.s)
    X, _, z = simulate(_gaussian_design(spec, n, p, beta0), beta0, nm, ss)
    data = Dataset(X, z)
    out = {}
    if p < n:
        lik, sur = _unpenalized_pair(spec, data, nm)
        _check_converged(lik, sur)
        out.update(_coverage_metrics("logLik", wald_intervals(data, nm, lik.beta, LIKELIHOOD, spec.alpha), beta0))
        out.update(_coverage_metrics("convex", wald_intervals(data, nm, sur.beta, SURROGATE, spec.alpha), beta0))
    plik, psur = _penalized_pair(spec, data, nm, ss)
    _check_converged(plik, psur)
    for name, res in (("logLik_debiased", plik), ("convex_debiased", psur)):
        psi = PsiSpec.from_loss(res.loss_kind, nm)
        if p < n:
            Theta, diag = inverse_hessian_theta(X, res.beta, psi), None
        else:
            Theta, diag = nodewise_theta(X, res.beta, psi)
        rep = debias(data, nm, res.beta, psi, Theta, spec.alpha, diag)
        out.update(_coverage_metrics(name, rep, beta0))
    return out


_REP_FUNCS = {
    EFFICIENCY: _rep_efficiency,
    NOISE_RATES: _rep_efficiency,
    ESTIMATION: _rep_estimation,
    SPARSITY: _rep_sparsity,
    COVERAGE: _rep_coverage,
}


def run_replication(spec, grid_index, rep):
    """``(metrics, failure_reason)`` for one replication.

    ``metrics`` is ``None`` when the replication failed outright; a partial
    failure keeps the metrics that do not depend on the failed fit.
    """
    ss = seed_stream(spec.seed, grid_index, rep)
    g = spec.grid[grid_index]
    try:
        return _REP_FUNCS[spec.study](spec, g, ss), None
    except _PartialFailure as exc:
        return exc.metrics, str(exc)
    except (_RepFailure, NoisyGLMError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


# ----------------------------------------------------------------------------
# aggregation


def _mean_se(v):
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, math.nan, 0
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(np.mean(v)), se, int(v.size)


def ratio_of_means(num, den):
    """``mean(num) / mean(den)`` with a delta-method standard error from paired draws."""
    ok = np.isfinite(num) & np.isfinite(den)
    num, den = num[ok], den[ok]
    B = num.size
    if B == 0:
        return math.nan, math.nan, 0
    mn, md = num.mean(), den.mean()
    r = float(mn / md)
    if B < 2:
        return r, 0.0, B
    C = np.cov(num, den, ddof=1)
    var = (C[0, 0] / mn ** 2 + C[1, 1] / md ** 2 - 2 * C[0, 1] / (mn * md)) * r ** 2
    return r, float(math.sqrt(max(var, 0.0) / B)), B


_RATIOS = (("r_mse", "mse_lik", "mse_sur"), ("r_amse", "amse_lik", "amse_sur"),
           ("r_smse", "smse_lik", "smse_sur"))


def _aggregate(spec, results):
    rows, raw, failures = [], {}, []
    B = spec.B
    for gi, g in enumerate(spec.grid):
        chunk = results[gi * B:(gi + 1) * B]
        names = []
        for metrics, _ in chunk:
            if metrics is not None:
                names.extend(k for k in metrics if k not in names)
        failed = sum(why is not None for _, why in chunk)
        failures.extend((g, r, why) for r, (_, why) in enumerate(chunk) if why is not None)
        for name in names:
            v = np.array([m.get(name, math.nan) if m is not None else math.nan for m, _ in chunk])
            raw[(gi, name)] = v
            mean, se, b = _mean_se(v)
            rows.append((g, name, mean, se, b, failed))
        for rname, a, b in _RATIOS:
            if (gi, a) in raw and (gi, b) in raw:
                r, se, cnt = ratio_of_means(raw[(gi, a)], raw[(gi, b)])
                rows.append((g, rname, r, se, cnt, failed))
    return rows, raw, failures


def worker_count(requested=None):
    cap = os.environ.get("NOISYGLM_THREADS")
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise NoisyGLMError(f"NOISYGLM_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


def run_study(spec, workers=None):
    """Run every (grid point, replication) pair and aggregate in a fixed order."""
    t0 = time.perf_counter()
    tasks = [(gi, r) for gi in range(len(spec.grid)) for r in range(spec.B)]
    nw = worker_count(workers)
    if nw == 1:
        results = [run_replication(spec, gi, r) for gi, r in tasks]
    else:
        with ThreadPoolExecutor(max_workers=nw) as ex:
            results = list(ex.map(lambda t: run_replication(spec, *t), tasks))
    rows, raw, failures = _aggregate(spec, results)
    return StudyResult(spec, rows, raw, failures, time.perf_counter() - t0)


# ----------------------------------------------------------------------------
# checks and output

RESULT_HEADER = ("study", "grid", "metric", "mean", "std_err", "B", "failed")


def check_monotone_gap(result):
    """Whether mean ``gap^2`` is nondecreasing along the grid.

    One adjacent decrease is tolerated if it is no larger than the standard
    error of the difference of the two means.
    """
    if result.spec.study not in (EFFICIENCY, NOISE_RATES):
        raise NoisyGLMError("check_monotone_gap needs an efficiency_vs_gap or noise_rates result")
    grid, mean, se = result.metric("gap2")
    order = np.argsort(grid, kind="stable")
    mean, se = mean[order], se[order]
    drops = 0
    for i in range(len(mean) - 1):
        diff = mean[i] - mean[i + 1]
        if diff > 0:
            drops += 1
            if diff > math.hypot(se[i], se[i + 1]) or drops > 1:
                return False
    return True


def gap_rd_rank_correlation(result):
    """Spearman correlation between mean ``gap^2`` and mean ``1 - rd`` over the grid."""
    _, gap2, _ = result.metric("gap2")
    _, omr, _ = result.metric("one_minus_rd")
    if len(gap2) < 2:
        return math.nan
    return float(spearmanr(gap2, omr).statistic)


def write_study_outputs(result, outdir, started=None, config_path=None):
    """Write ``results.csv``, ``replications.csv`` (and ``coverage_table.csv``) plus the manifest."""
    os.makedirs(outdir, exist_ok=True)
    spec = result.spec
    write_csv(os.path.join(outdir, "results.csv"), RESULT_HEADER,
              [(spec.study,) + tuple(r) for r in result.rows])
    rep_rows = []
    for (gi, name), v in sorted(result.raw.items()):
        rep_rows.extend((spec.grid[gi], r, name, float(x)) for r, x in enumerate(v))
    write_csv(os.path.join(outdir, "replications.csv"), ("grid", "rep", "metric", "value"), rep_rows)
    if spec.study == COVERAGE:
        write_csv(os.path.join(outdir, "coverage_table.csv"), ("method",) + COVERAGE_COLUMNS,
                  result.coverage_table())
    write_manifest(
        outdir, "study", spec.to_dict(), spec.seed,
        inputs=[config_path] if config_path else (), started=started or now_iso(),
        extra={"wall_time_seconds": result.wall_time, "failed_replications": len(result.failures)},
    )

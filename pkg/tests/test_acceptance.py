"""End-to-end acceptance checks.

Each test records one PASS/FAIL line (collected in the terminal summary) and
then asserts, so a failing criterion is visible both ways. Tolerances are the
stated ones and are not loosened here.
"""
import itertools
import math
import time

import mpmath
import numpy as np
import pytest

from noisyglm.experiments import (
    COVERAGE, EFFICIENCY, ESTIMATION, NOISE_RATES, StudySpec, check_monotone_gap,
    gap_rd_rank_correlation, run_study, write_study_outputs,
)
from noisyglm.glm_core import NoiseModel, h_ln
from noisyglm.inference import cor1_bound_check, info_matrices
from noisyglm.losses import LIKELIHOOD, SURROGATE, Dataset, loss_lik, loss_sur
from noisyglm.optim import GRADMAP_TOL, FitConfig, fit
from noisyglm.simgen import AR1Cov, DesignSpec, PuSpec, case_control_gamma, pu_noise_rates, simulate

from _oracles import central_diff, irls_logistic

pytestmark = pytest.mark.acceptance

NM = NoiseModel(0.1, 0.05)


def test_c01_zero_noise_oracle(criterion):
    rng = np.random.default_rng(101)
    worst, elapsed = 0.0, 0.0
    for _ in range(20):
        X = rng.normal(size=(500, 5))
        beta0 = rng.normal(scale=0.5, size=5)
        y = (rng.random(500) < 1 / (1 + np.exp(-(X @ beta0)))).astype(float)
        ref = irls_logistic(X, y)
        data = Dataset(X, y)
        for kind in (LIKELIHOOD, SURROGATE):
            t0 = time.perf_counter()
            res = fit(data, NoiseModel(), FitConfig(loss_kind=kind, tol_gradmap=1e-10, tol_obj=0.0))
            elapsed += time.perf_counter() - t0
            worst = max(worst, float(np.max(np.abs(res.beta - ref))))
    ok = criterion(1, worst <= 1e-6 and elapsed < 5, f"max |beta - irls| = {worst:.2e}, fit time {elapsed:.2f}s")
    assert ok


def test_c02_gradient_fd(criterion):
    rng = np.random.default_rng(102)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        n, p = int(rng.integers(20, 200)), int(rng.integers(1, 8))
        X = rng.normal(size=(n, p))
        z = (rng.random(n) < 0.5).astype(float)
        rho0 = rng.uniform(0, 0.45)
        nm = NoiseModel(rho0, rng.uniform(0, 0.45))
        beta = rng.normal(size=p)
        data = Dataset(X, z)
        for loss in (loss_lik, loss_sur):
            g = loss(beta, data, nm).gradient
            fd = central_diff(lambda b: loss(b, data, nm).value, beta, h=1e-5)
            worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1.0)))
    elapsed = time.perf_counter() - t0
    ok = criterion(2, worst <= 1e-6 and elapsed < 5, f"max relative error {worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_c03_h_bounds(criterion):
    t = np.linspace(-20, 20, 2001)
    rates = (0.05, 0.1, 0.2)
    t0 = time.perf_counter()
    m1 = m2 = m3 = 0.0
    for r0, r1 in itertools.product(rates, rates):
        if r0 + r1 >= 1:
            continue
        d = h_ln(t, NoiseModel(r0, r1))
        m1 = max(m1, np.max(np.abs(d.h1)))
        m2 = max(m2, np.max(np.abs(d.h2)))
        m3 = max(m3, np.max(np.abs(d.h3)))
    elapsed = time.perf_counter() - t0
    ok = m1 <= 1 + 1e-9 and m2 <= 2 + 1e-9 and m3 <= 7 + 1e-9 and elapsed < 1
    assert criterion(3, ok, f"max|h'|={m1:.4f} max|h''|={m2:.4f} max|h'''|={m3:.4f}, {elapsed:.3f}s")


def test_c04_efficiency_ordering(criterion):
    rng = np.random.default_rng(104)
    beta0 = np.full(10, 1 / math.sqrt(10))
    t0 = time.perf_counter()
    worst_eig, worst_ratio = math.inf, 0.0
    for k in range(100):
        d = rng.uniform(0, math.sqrt(2.5))
        X, _, _ = simulate(DesignSpec(1000, 10, d=d, cov=AR1Cov()), beta0, NM, seed=10_000 + k)
        info = info_matrices(X, beta0, NM)
        lo = np.linalg.eigvalsh(info.I_lik - info.I_sur)[0] / np.trace(info.I_lik)
        worst_eig = min(worst_eig, lo)
        rd, bound = cor1_bound_check(X, beta0, NM)
        worst_ratio = max(worst_ratio, rd / bound if bound > 0 else (0.0 if rd == 0 else math.inf))
    elapsed = time.perf_counter() - t0
    ok = worst_eig >= -1e-8 and worst_ratio <= 1 and elapsed < 30
    assert criterion(4, ok, f"min eig/tr = {worst_eig:.2e}, max rd/(c_n gap^2) = {worst_ratio:.2e}, {elapsed:.1f}s")


def test_c05_unique_stationary_point(criterion):
    beta0 = np.r_[np.ones(5), -np.ones(5)] / math.sqrt(10)
    X, _, z = simulate(DesignSpec(5000, 10, d=0.5, cov=AR1Cov()), beta0, NM, seed=105)
    data = Dataset(X, z)
    rng = np.random.default_rng(205)
    t0 = time.perf_counter()
    betas, gm = [], []
    for _ in range(20):
        u = rng.normal(size=10)
        init = u / np.linalg.norm(u) * 5 * rng.random() ** (1 / 10)
        res = fit(data, NM, FitConfig(loss_kind=LIKELIHOOD, init=init, tol_gradmap=1e-8, tol_obj=0.0))
        betas.append(res.beta)
        gm.append(res.gradmap_norm if res.termination == GRADMAP_TOL else math.inf)
    elapsed = time.perf_counter() - t0
    spread = max(np.linalg.norm(a - b) for a, b in itertools.combinations(betas, 2))
    ok = spread <= 1e-4 and max(gm) <= 1e-6 and elapsed < 60
    assert criterion(5, ok, f"max pairwise distance {spread:.2e}, max gradmap {max(gm):.2e}, {elapsed:.1f}s")


TARGET_COVERAGE = {"logLik": 0.951, "convex": 0.962, "logLik_debiased": 0.944, "convex_debiased": 0.946}


def test_c06_coverage(criterion):
    t0 = time.perf_counter()
    res = run_study(StudySpec(COVERAGE, B=100, seed=106))
    table = {row[0]: row[1:] for row in res.coverage_table()}
    cov = {m: table[m][0] for m in TARGET_COVERAGE}
    dev = max(abs(cov[m] - TARGET_COVERAGE[m]) for m in cov)
    len_lik, len_cvx = table["logLik"][3], table["convex"][3]
    t_low = time.perf_counter() - t0

    t1 = time.perf_counter()
    hd = run_study(StudySpec(COVERAGE, grid=(300,), p=400, s=5, B=50, seed=206))
    hd_table = {row[0]: row[1:] for row in hd.coverage_table()}
    zero_cov = [hd_table[m][2] for m in ("logLik_debiased", "convex_debiased")]
    t_high = time.perf_counter() - t1

    ok = (dev <= 0.05 and len_lik < len_cvx and t_low <= 15 * 60
          and all(0.90 <= c <= 1.0 for c in zero_cov) and not res.failures)
    cov_txt = " ".join(f"{m}={cov[m]:.3f}" for m in cov)
    detail = (f"{cov_txt}; CI length {len_lik:.3f} < {len_cvx:.3f}; "
              f"p>n zero-coord coverage {zero_cov[0]:.3f}/{zero_cov[1]:.3f} "
              f"(failed reps {len(res.failures)}+{len(hd.failures)}); {t_low:.0f}s + {t_high:.0f}s")
    assert criterion(6, ok, detail)


def test_c07_rate(criterion):
    t0 = time.perf_counter()
    spec = StudySpec(ESTIMATION, grid=(1000, 2000, 4000), p_equals_n=True, s=10, B=30,
                     lambda_rule="theory", seed=107)
    res = run_study(spec)
    elapsed = time.perf_counter() - t0
    logn = np.log(np.array(spec.grid, dtype=float))
    slopes = {}
    for kind in ("lik", "sur"):
        med = [np.nanmedian(res.values(i, f"l2err_{kind}")) for i in range(len(spec.grid))]
        slopes[kind] = float(np.polyfit(logn, np.log(med), 1)[0])
    ok = all(-0.75 <= s <= -0.25 for s in slopes.values()) and elapsed <= 600
    assert criterion(7, ok, f"slope lik {slopes['lik']:.3f}, sur {slopes['sur']:.3f}, "
                            f"failed reps {len(res.failures)}, {elapsed:.0f}s")


def test_c08_gap_trends(criterion):
    t0 = time.perf_counter()
    eff = run_study(StudySpec(EFFICIENCY, B=200, seed=108))
    noise = run_study(StudySpec(NOISE_RATES, B=200, seed=208))
    elapsed = time.perf_counter() - t0
    mono_d = check_monotone_gap(eff)
    rho = gap_rd_rank_correlation(eff)
    _, r, se = eff.metric("r_mse")
    r_ok = bool(np.all(r <= 1 + 2 * se))
    mono_rho = check_monotone_gap(noise)
    ok = mono_d and rho <= -0.8 and r_ok and mono_rho and elapsed <= 600
    r_txt = ",".join(f"{v:.3f}" for v in r)
    assert criterion(8, ok, f"gap2 monotone in d: {mono_d}, spearman {rho:.3f}, r_mse [{r_txt}] "
                            f"within 1+2se: {r_ok}, monotone in rho0: {mono_rho}, {elapsed:.0f}s")


def test_c09_pu_arithmetic(criterion):
    spec = PuSpec(0.35, 2_533_388, 1_500_277)
    mpmath.mp.dps = 50
    pi, nl, nu = mpmath.mpf("0.35"), mpmath.mpf(2_533_388), mpmath.mpf(1_500_277)
    rho1_ref = float(pi * nu / (nl + pi * nu))
    gamma_ref = float(mpmath.log(1 + nl / (pi * nu)))
    rho1, gamma = pu_noise_rates(spec).rho1, case_control_gamma(spec)
    ok_impl = math.isclose(rho1, rho1_ref, rel_tol=1e-14) and math.isclose(gamma, gamma_ref, rel_tol=1e-14)
    ok = ok_impl and abs(rho1 - 0.17168) <= 1e-4 and abs(gamma - 1.7622) <= 1e-4
    assert criterion(9, ok, f"rho1 = {rho1:.6f} (target 0.17168), gamma = {gamma:.9f} (target 1.7622), "
                            f"high-precision agreement: {ok_impl}")


def test_c10_determinism(criterion, tmp_path):
    t0 = time.perf_counter()
    specs = [
        StudySpec(EFFICIENCY, n=300, p=5, grid=(0.0, 1.0, 2.0), B=8, seed=110),
        StudySpec(ESTIMATION, n=200, p=8, s=4, grid=(200, 400), B=4, cv_folds=3, n_lambda=6, seed=210),
    ]
    same = True
    for k, spec in enumerate(specs):
        blobs = []
        for w in (1, 2, 4):
            d = tmp_path / f"{k}_{w}"
            write_study_outputs(run_study(spec, workers=w), str(d))
            blobs.append((d / "results.csv").read_bytes() + (d / "replications.csv").read_bytes())
        same &= len(set(blobs)) == 1
    elapsed = time.perf_counter() - t0
    assert criterion(10, same and elapsed < 60, f"byte-identical across 1/2/4 workers: {same}, {elapsed:.1f}s")

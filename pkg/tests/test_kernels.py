import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from noisyglm import kernels
from noisyglm.kernels import get_backend

py = get_backend("python")
try:
    cy = get_backend("cython")
except ImportError:
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled extension not built")

NOISE = [(0.85, 0.1, 0.05), (0.8, 0.0, 0.2), (0.8, 0.2, 0.0), (1.0, 0.0, 0.0), (0.3, 0.4, 0.3)]
finite_t = arrays(float, st.integers(1, 40), elements=st.floats(-800, 800))


@needs_ext
@pytest.mark.parametrize("abr", NOISE)
@given(t=finite_t)
def test_h_terms_agree(abr, t):
    for u, v in zip(py.h_terms(t, *abr), cy.h_terms(t, *abr)):
        assert np.all(np.isfinite(v))
        np.testing.assert_allclose(v, u, rtol=1e-10, atol=1e-13)


@needs_ext
@pytest.mark.parametrize("abr", NOISE)
@given(t=finite_t, seed=st.integers(0, 2**32 - 1))
def test_lik_terms_agree(abr, t, seed):
    z = np.random.default_rng(seed).integers(0, 2, size=t.size).astype(float)
    for u, v in zip(py.lik_terms(t, z, *abr), cy.lik_terms(t, z, *abr)):
        assert np.all(np.isfinite(v))
        np.testing.assert_allclose(v, u, rtol=1e-10, atol=1e-13)


@needs_ext
@given(t=finite_t, tz=st.floats(-2, 2))
def test_sur_terms_agree(t, tz):
    for u, v in zip(py.sur_terms(t, tz), cy.sur_terms(t, tz)):
        np.testing.assert_allclose(v, u, rtol=1e-13, atol=1e-300)


@needs_ext
def test_shapes_preserved():
    t = np.linspace(-3, 3, 12).reshape(3, 4)
    for mod in (py, cy):
        out = mod.h_terms(t, 0.85, 0.1, 0.05)
        assert all(o.shape == (3, 4) for o in out)


@pytest.mark.parametrize("backend", ["python", pytest.param("cython", marks=needs_ext)])
def test_lasso_cd_matches_closed_form(backend):
    mod = get_backend(backend)
    rng = np.random.default_rng(0)
    A = rng.normal(size=(200, 6))
    G = A.T @ A / 200
    c = rng.normal(size=6)
    beta = np.zeros(6)
    sweeps, ok = mod.lasso_cd_gram(G, c, 0.0, beta, 10_000, 1e-14)
    assert ok
    np.testing.assert_allclose(beta, np.linalg.solve(G, c), atol=1e-10)


@pytest.mark.parametrize("backend", ["python", pytest.param("cython", marks=needs_ext)])
def test_lasso_cd_kkt(backend):
    mod = get_backend(backend)
    rng = np.random.default_rng(1)
    A = rng.normal(size=(100, 30))
    G = A.T @ A / 100
    c = rng.normal(size=30) * 0.3
    lam = np.linspace(0.05, 0.3, 30)
    beta = np.zeros(30)
    _, ok = mod.lasso_cd_gram(G, c, lam, beta, 100_000, 1e-13)
    g = c - G @ beta
    on = beta != 0
    assert ok
    np.testing.assert_allclose(g[on], lam[on] * np.sign(beta[on]), atol=1e-9)
    assert np.all(np.abs(g[~on]) <= lam[~on] + 1e-9)


@needs_ext
def test_lasso_backends_identical_path():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(80, 20))
    G = A.T @ A / 80
    c = rng.normal(size=20)
    b1, b2 = np.zeros(20), np.zeros(20)
    r1 = py.lasso_cd_gram(G, c, 0.1, b1, 500, 1e-12)
    r2 = cy.lasso_cd_gram(G, c, 0.1, b2, 500, 1e-12)
    assert r1 == r2
    np.testing.assert_allclose(b1, b2, rtol=1e-12, atol=1e-15)


def test_unknown_backend():
    with pytest.raises(ValueError):
        get_backend("fortran")


def test_env_forces_fallback():
    env = dict(os.environ, NOISYGLM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import noisyglm; print(noisyglm.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_active_backend_reported():
    assert kernels.BACKEND in ("python", "cython")
    assert kernels.BACKEND == ("cython" if kernels.get_backend() is cy else "python")

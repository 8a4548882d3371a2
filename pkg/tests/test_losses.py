import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from noisyglm.errors import DimensionError, NoisyGLMError
from noisyglm.glm_core import NoiseModel, mean_z
from noisyglm.losses import (
    LIKELIHOOD, SURROGATE, Dataset, clean_loss, get_loss, loss_lik, loss_sur, loss_value,
    unbiasedness_check,
)

from _oracles import central_diff, lik_value_naive, sur_value_naive

NM = NoiseModel(0.1, 0.05)


def _data(rng, n=200, p=4, nm=NM, scale=1.0):
    X = rng.normal(scale=scale, size=(n, p))
    y = (rng.random(n) < 0.5).astype(float)
    flip = rng.random(n) < np.where(y == 1, nm.rho1, nm.rho0)
    return Dataset(X, np.where(flip, 1 - y, y), y=y)


class TestDataset:
    def test_validation(self):
        with pytest.raises(DimensionError):
            Dataset(np.ones((3, 2)), [0, 1])
        with pytest.raises(NoisyGLMError):
            Dataset(np.ones((2, 2)), [0, 2])
        with pytest.raises(NoisyGLMError):
            Dataset(np.array([[np.nan], [1.0]]), [0, 1])
        with pytest.raises(DimensionError):
            Dataset(np.ones((2, 2)), [0, 1], intercept_col=2)

    def test_subset(self, rng):
        d = _data(rng)
        s = d.subset(np.arange(10))
        assert s.n == 10 and s.p == d.p
        np.testing.assert_array_equal(s.y, d.y[:10])


class TestValues:
    def test_match_naive_formulas(self, rng):
        d = _data(rng)
        beta = rng.normal(size=d.p)
        assert loss_lik(beta, d, NM).value == pytest.approx(
            lik_value_naive(beta, d.X, d.z, NM.rho0, NM.rho1), rel=1e-12)
        assert loss_sur(beta, d, NM).value == pytest.approx(
            sur_value_naive(beta, d.X, d.z, NM.rho0, NM.rho1), rel=1e-12)

    def test_log2_at_zero(self, rng):
        d = _data(rng)
        nm = NoiseModel()
        assert loss_lik(np.zeros(d.p), d, nm).value == pytest.approx(np.log(2), rel=1e-15)
        assert loss_sur(np.zeros(d.p), d, nm).value == pytest.approx(np.log(2), rel=1e-15)

    def test_loss_value_agrees(self, rng):
        d = _data(rng)
        beta = rng.normal(size=d.p)
        t = d.X @ beta
        assert loss_value(LIKELIHOOD, t, d.z, NM) == pytest.approx(loss_lik(beta, d, NM).value)
        assert loss_value(SURROGATE, t, d.z, NM) == pytest.approx(loss_sur(beta, d, NM).value)
        with pytest.raises(ValueError):
            loss_value("other", t, d.z, NM)
        assert get_loss(LIKELIHOOD) is loss_lik

    def test_dimension_check(self, rng):
        d = _data(rng)
        with pytest.raises(DimensionError):
            loss_lik(np.zeros(d.p + 1), d, NM)


@pytest.mark.parametrize("loss", [loss_lik, loss_sur])
def test_gradient_finite_differences(loss):
    rng = np.random.default_rng(7)
    for _ in range(50):
        r0, r1 = rng.uniform(0, 0.3, size=2)
        nm = NoiseModel(r0, r1)
        d = _data(rng, n=80, p=5, nm=nm)
        beta = rng.normal(scale=0.7, size=d.p)
        g = loss(beta, d, nm).gradient
        fd = central_diff(lambda b: loss(b, d, nm).value, beta)
        assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(g)))


@pytest.mark.parametrize("loss", [loss_lik, loss_sur])
def test_hessian_finite_differences(loss, rng):
    d = _data(rng, n=60, p=3)
    beta = rng.normal(size=3)
    H = loss(beta, d, NM, hessian=True).hessian(d.X)
    fd = np.column_stack([
        central_diff(lambda b: loss(b, d, NM).gradient[j], beta) for j in range(3)
    ])
    np.testing.assert_allclose(H, fd, atol=1e-7)


def test_hessian_requires_terms(rng):
    d = _data(rng)
    with pytest.raises(NoisyGLMError):
        loss_lik(np.zeros(d.p), d, NM).hessian(d.X)


def test_population_hessian_psd(rng):
    """With z replaced by its mean, rho_R averages away and only rho_I >= 0 remains."""
    X = rng.normal(size=(300, 4))
    beta = rng.normal(size=4)
    t = X @ beta
    m = mean_z(t, NM)
    H = np.zeros((4, 4))
    for zval, w in ((1.0, m), (0.0, 1 - m)):
        ev = loss_lik(beta, Dataset(X, np.full(300, zval)), NM, hessian=True)
        wi, wr = ev.hessian_terms
        H += (X.T * (w * (wi + wr))) @ X / 300
    assert np.linalg.eigvalsh(H).min() > 0
    wi = loss_lik(beta, Dataset(X, np.zeros(300)), NM, hessian=True).hessian_terms[0]
    np.testing.assert_allclose(H, (X.T * wi) @ X / 300, rtol=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_clean_losses_coincide(seed):
    rng = np.random.default_rng(seed)
    d = _data(rng, n=40, p=3, nm=NoiseModel(), scale=3.0)
    beta = rng.normal(scale=3, size=3)
    nm = NoiseModel()
    a = loss_lik(beta, d, nm, hessian=True)
    b = loss_sur(beta, d, nm, hessian=True)
    assert a.value == pytest.approx(b.value, rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(a.gradient, b.gradient, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a.hessian(d.X), b.hessian(d.X), rtol=1e-12, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
def test_surrogate_convex(seed, lam):
    rng = np.random.default_rng(seed)
    d = _data(rng, n=50, p=3)
    b1, b2 = rng.normal(scale=4, size=(2, 3))
    f = lambda b: loss_sur(b, d, NM).value
    assert f(lam * b1 + (1 - lam) * b2) <= lam * f(b1) + (1 - lam) * f(b2) + 1e-10


@given(arrays(float, 30, elements=st.floats(-50, 50)))
def test_surrogate_curvature_bounded(t):
    d = Dataset(np.eye(30), np.zeros(30))
    w = loss_sur(t, d, NM, hessian=True).hessian_terms[0]
    assert np.all(w <= 0.25 + 1e-15) and np.all(w >= 0)


@given(st.integers(0, 2**32 - 1))
def test_likelihood_gradient_bound(seed):
    rng = np.random.default_rng(seed)
    r0, r1 = rng.uniform(0, 0.45, size=2)
    nm = NoiseModel(r0, r1)
    d = _data(rng, n=30, p=4, nm=nm, scale=5)
    beta = rng.normal(scale=5, size=4)
    g = loss_lik(beta, d, nm).gradient
    assert np.max(np.abs(g)) <= np.max(np.abs(d.X)) + 1e-12


class TestUnbiasedness:
    def test_clean_exact_zero(self, rng):
        d = _data(rng, nm=NoiseModel())
        d = Dataset(d.X, d.y, y=d.y)
        gap, se = unbiasedness_check(rng.normal(size=d.p), d, NoiseModel())
        assert gap == 0.0 and se == 0.0

    def test_monte_carlo(self, rng):
        d = _data(rng, n=50, p=3)
        gap, se = unbiasedness_check(rng.normal(size=3), d, NM, n_draws=10_000, seed=3)
        assert gap < 3 * se

    def test_single_observation_two_point(self):
        x = np.array([[0.8, -1.2]])
        beta = np.array([0.5, 0.25])
        t = float((x @ beta)[0])
        y = 1.0
        pz1 = (1 - NM.rho1) if y == 1 else NM.rho0
        e = sum(w * loss_sur(beta, Dataset(x, [zv]), NM).value for zv, w in ((1.0, pz1), (0.0, 1 - pz1)))
        assert e == pytest.approx(clean_loss(beta, x, [y]), abs=1e-13)
        assert e == pytest.approx(np.log1p(np.exp(t)) - y * t, abs=1e-13)

    def test_needs_clean_labels(self, rng):
        d = _data(rng)
        with pytest.raises(NoisyGLMError):
            unbiasedness_check(np.zeros(d.p), Dataset(d.X, d.z), NM)

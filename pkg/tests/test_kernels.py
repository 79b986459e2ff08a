import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from gpdr import kernels as K
from gpdr.errors import DimensionMismatch, ZeroVariance
from gpdr.kernels import GaussianBatch, GaussianInput, KernelParams


def gi(m, v):
    return GaussianInput(np.atleast_1d(m), np.atleast_1d(v))


def random_batch(rng, n, d, ps_var=True):
    means = rng.normal(size=(n, d + 2))
    var = np.zeros_like(means)
    if ps_var:
        var[:, 0] = rng.uniform(0.0, 0.5, n)
    return GaussianBatch(means, var)


def random_params(rng, variant):
    k = variant.n_lengthscales()
    return KernelParams(gamma_sq=float(rng.uniform(0.5, 3)), omega_sq=float(rng.uniform(0.2, 2)),
                        lengthscales=rng.uniform(0.5, 2.0, k) if k else np.ones(1),
                        rho=float(rng.uniform(0.5, 2)), symg_a=float(rng.uniform(1, 20)),
                        noise_var=float(rng.uniform(0.05, 0.5)))


# scalar kernels ----------------------------------------------------------------

def test_rbf_examples():
    assert K.rbf(5, 5, 1, 1) == 1.0
    assert K.rbf(0, 2, 1, 1) == pytest.approx(0.135335, abs=1e-6)
    assert K.rbf(0, 2, 3, 1) == pytest.approx(0.406006, abs=1e-6)


def test_matern_examples(rng):
    assert K.matern_half([1.0, 2.0], [1.0, 2.0], 2.0, 1.0) == 2.0
    assert K.matern_half([0.0], [1.0], 1.0, 1.0) == pytest.approx(0.367879, abs=1e-6)
    for _ in range(100):
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert abs(K.matern_half(a, b, 1.3, 0.7) - K.matern_half(b, a, 1.3, 0.7)) <= 1e-15
    with pytest.raises(DimensionMismatch):
        K.matern_half([0.0], [0.0, 1.0], 1.0, 1.0)


def test_prbf_examples():
    assert K.prbf(gi(0, 0), gi(0, 0), 1.0, 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
    assert K.prbf(gi(0, 0), gi(0, 0), 1.0, 1.0) == pytest.approx(0.398942, abs=1e-6)
    val = K.prbf(gi(0, 1.5), gi(2, 1.5), 1.0, 1.0)
    assert val == pytest.approx(math.exp(-0.5) / math.sqrt(8 * math.pi), abs=1e-12)
    # the rounded literal 0.120983 is 2.4e-6 below the closed form 0.1209854
    assert val == pytest.approx(0.120983, abs=1e-5)


def test_prbf_matches_monte_carlo_double_integral():
    # k(a, b) = E[ N(p | p', l^2) ] with p ~ N(mu_a, var_a), p' ~ N(mu_b, var_b)
    rng = np.random.default_rng(0)
    p = rng.normal(0.0, math.sqrt(1.5), 1_000_000)
    q = rng.normal(2.0, math.sqrt(1.5), 1_000_000)
    mc = norm.pdf(p, loc=q, scale=1.0).mean()
    assert abs(mc - K.prbf(gi(0, 1.5), gi(2, 1.5), 1.0, 1.0)) < 0.002


def test_prbf_matches_quadrature_double_integral(rng):
    # tensor Gauss-Hermite rule over (p, p') for E[gamma^2 N(p - p' | 0, l^2)]
    nodes, weights = np.polynomial.hermite_e.hermegauss(150)
    weights = weights / weights.sum()
    for _ in range(25):
        ma, mb = rng.normal(size=2)
        va, vb = rng.uniform(0.05, 1.5, 2)
        gamma_sq, ls = float(rng.uniform(0.5, 3)), float(rng.uniform(0.3, 2))
        p = ma + math.sqrt(va) * nodes
        q = mb + math.sqrt(vb) * nodes
        val = weights @ (gamma_sq * norm.pdf(p[:, None] - q[None, :], scale=ls)) @ weights
        assert K.prbf(gi(ma, va), gi(mb, vb), gamma_sq, ls) == pytest.approx(val, abs=1e-10)


def test_prbf_decreases_with_variance():
    vals = [K.prbf(gi(0.3, v), gi(0.3, v), 1.0, 1.0) for v in np.linspace(0, 3, 20)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_prbf_zero_variance_is_normalized_gaussian(rng):
    for _ in range(50):
        d = int(rng.integers(1, 6))
        a, b = rng.normal(size=d), rng.normal(size=d)
        ls = rng.uniform(0.3, 2.0, d)
        gamma_sq = float(rng.uniform(0.5, 2))
        expected = gamma_sq * np.prod(norm.pdf(a, loc=b, scale=ls))
        assert K.prbf(GaussianInput.deterministic(a), GaussianInput.deterministic(b), gamma_sq, ls) \
            == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_prbf_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        K.prbf(gi(0, 0), GaussianInput([0, 0], [0, 0]), 1.0, 1.0)


def test_prbf_steepest_slope_bounded_by_deterministic_kernel():
    # input variance widens the kernel, so its steepest slope in the mean difference
    # never exceeds the zero-variance kernel's (tails of a wider kernel can be steeper)
    grid = np.linspace(-6, 6, 2401)

    def max_slope(ls, var):
        k = np.array([K.prbf(gi(0.0, var), gi(x, var), 1.0, ls) for x in grid])
        return np.max(np.abs(np.gradient(k, grid)))

    for ls in (0.5, 0.8, 1.5):
        base = max_slope(ls, 0.0)
        for var in (0.05, 0.2, 0.5, 2.0):
            assert ls**2 + 2 * var >= ls**2
            assert max_slope(ls, var) <= base


def test_a_prbf_examples():
    params = KernelParams(gamma_sq=1.0, omega_sq=1.0, lengthscales=[1.0], rho=1.0)
    theta = (gi(0.4, 0.0), 2.0)
    assert K.a_prbf(theta, theta, params) == pytest.approx(1 / math.sqrt(2 * math.pi) + 1, abs=1e-12)
    assert K.a_prbf(theta, theta, params) == pytest.approx(1.398942, abs=1e-6)
    tiny = KernelParams(gamma_sq=1.0, omega_sq=1e-300, lengthscales=[1.0], rho=1.0)
    a, b = (gi(0.1, 0.3), 1.0), (gi(-0.5, 0.2), 3.0)
    assert K.a_prbf(a, b, tiny) == pytest.approx(K.prbf(a[0], b[0], 1.0, [1.0]), rel=1e-15)


def test_symg_examples():
    assert K.symg(gi(0.5, 2.0), gi(0.5, 2.0), 1.0) == 1.0
    assert K.symg_divergence(gi(0, 1), gi(1, 1)) == pytest.approx(2.0)
    assert K.symg(gi(0, 1), gi(1, 1), 1.0) == pytest.approx(0.135335, abs=1e-6)
    with pytest.raises(ZeroVariance):
        K.symg(gi(0, 0), gi(1, 1), 1.0)


def test_symmetry_of_scalar_kernels(rng):
    for _ in range(1000):
        d = int(rng.integers(1, 4))
        a = GaussianInput(rng.normal(size=d), rng.uniform(0.01, 1, d))
        b = GaussianInput(rng.normal(size=d), rng.uniform(0.01, 1, d))
        ls = rng.uniform(0.5, 2, d)
        assert abs(K.prbf(a, b, 1.0, ls) - K.prbf(b, a, 1.0, ls)) <= 1e-15
        assert abs(K.symg(a, b, 3.0) - K.symg(b, a, 3.0)) <= 1e-15


# parameters -------------------------------------------------------------------------

@pytest.mark.parametrize("tag", K.VARIANT_TAGS)
def test_unconstrained_round_trip(rng, tag):
    batch = random_batch(rng, 5, 3)
    variant = K.make_variant(tag, batch)
    params = random_params(rng, variant)
    back = variant.from_unconstrained(variant.to_unconstrained(params), params)
    for name in ("gamma_sq", "omega_sq", "rho", "symg_a", "noise_var"):
        assert getattr(back, name) == pytest.approx(getattr(params, name), rel=1e-12)
    np.testing.assert_allclose(back.lengthscales, params.lengthscales, rtol=1e-12)


def test_params_reject_nonpositive():
    with pytest.raises(ValueError):
        KernelParams(gamma_sq=0.0)
    with pytest.raises(ValueError):
        KernelParams(lengthscales=[1.0, -1.0])
    with pytest.raises(ValueError):
        KernelParams(noise_var=-1.0)


def test_params_dict_round_trip():
    p = KernelParams(2.0, 0.5, [0.3, 0.4], 1.5, 2.5, 0.01)
    q = KernelParams.from_dict(p.to_dict())
    assert q.to_dict() == p.to_dict()


def test_variant_roles():
    v = K.KernelVariant("rbf-nd", 3)
    assert v.ps_column is None and v.treatment_column == 4
    assert v.smooth_columns() == [1, 2, 3, 4]
    assert K.KernelVariant("a-prbf", 3).smooth_columns() == [0, 1, 2, 3]
    assert K.KernelVariant("rbf", 3).smooth_columns() == [0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        K.KernelVariant("bogus", 3)


# Gram assembly: vectorized route vs scalar kernels ------------------------------------

def scalar_entry(variant, params, a: GaussianInput, b: GaussianInput):
    d = variant.n_covariates
    tag = variant.tag
    if tag in ("a-prbf", "a-rbf"):
        va = a.variances[: d + 1] if tag == "a-prbf" else np.zeros(d + 1)
        vb = b.variances[: d + 1] if tag == "a-prbf" else np.zeros(d + 1)
        return K.a_prbf((GaussianInput(a.means[: d + 1], va), a.means[-1]),
                        (GaussianInput(b.means[: d + 1], vb), b.means[-1]), params)
    if tag == "prbf":
        return K.prbf(a, b, params.gamma_sq, params.lengthscales)
    if tag in ("rbf", "rbf-nd"):
        cols = slice(1, None) if tag == "rbf-nd" else slice(None)
        r2 = float(np.sum((a.means[cols] - b.means[cols]) ** 2))
        return params.omega_sq * math.exp(-r2 / (2 * params.rho**2))
    floor = np.asarray(variant.symg_floor)
    fa = GaussianInput(a.means[: d + 1], np.maximum(a.variances[: d + 1], floor))
    fb = GaussianInput(b.means[: d + 1], np.maximum(b.variances[: d + 1], floor))
    return (params.gamma_sq * K.symg(fa, fb, params.symg_a)
            + K.rbf(a.means[-1], b.means[-1], params.omega_sq, params.rho))


@pytest.mark.parametrize("tag", K.VARIANT_TAGS)
def test_gram_matches_scalar_kernels(rng, tag):
    a = random_batch(rng, 6, 2)
    b = random_batch(rng, 4, 2)
    variant = K.make_variant(tag, a)
    params = random_params(rng, variant)
    kmat = K.gram(variant, params, a, b)
    expected = np.array([[scalar_entry(variant, params, a.row(i), b.row(j)) for j in range(4)]
                         for i in range(6)])
    np.testing.assert_allclose(kmat, expected, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(K.gram_diag(variant, params, a), np.diag(K.gram(variant, params, a, a)))


@pytest.mark.parametrize("tag", K.VARIANT_TAGS)
def test_gram_single_row_and_symmetry(rng, tag):
    a = random_batch(rng, 7, 3)
    variant = K.make_variant(tag, a)
    params = random_params(rng, variant)
    one = a.take([2])
    assert K.gram(variant, params, one, one).shape == (1, 1)
    assert K.gram(variant, params, one, one)[0, 0] == pytest.approx(
        scalar_entry(variant, params, a.row(2), a.row(2)), rel=1e-12)
    kmat = K.gram(variant, params, a, a)
    assert np.max(np.abs(kmat - kmat.T)) <= 1e-12


def test_gram_width_mismatch(rng):
    variant = K.KernelVariant("a-prbf", 2)
    with pytest.raises(DimensionMismatch):
        K.gram(variant, KernelParams(lengthscales=np.ones(3)), random_batch(rng, 3, 3), random_batch(rng, 3, 3))


def test_a_rbf_equals_a_prbf_without_ps_variance(rng):
    batch = random_batch(rng, 9, 2, ps_var=False)
    params = random_params(rng, K.make_variant("a-prbf", batch))
    k1 = K.gram(K.make_variant("a-prbf", batch), params, batch, batch)
    k2 = K.gram(K.make_variant("a-rbf", batch), params, batch, batch)
    np.testing.assert_array_equal(k1, k2)


@pytest.mark.parametrize("tag", K.VARIANT_TAGS)
def test_gram_positive_semidefinite(rng, tag):
    for _ in range(30):
        n, d = int(rng.integers(2, 41)), int(rng.integers(0, 5))
        batch = random_batch(rng, n, d)
        variant = K.make_variant(tag, batch)
        eig = np.linalg.eigvalsh(K.gram(variant, random_params(rng, variant), batch, batch))
        assert eig.min() >= -1e-8 * eig.max()


@given(st.integers(2, 30), st.floats(0.2, 3.0), st.sampled_from(["matern12", "rbf"]))
def test_stationary_gram_psd(n, ls, family):
    X = np.random.default_rng(n).normal(size=(n, 3))
    eig = np.linalg.eigvalsh(K.StationaryKernel(family, 1.0, ls)(X, X))
    assert eig.min() >= -1e-8 * eig.max()


def test_stationary_kernel_matches_scalar(rng):
    X, Z = rng.normal(size=(5, 2)), rng.normal(size=(3, 2))
    kern = K.StationaryKernel("matern12", 1.7, 0.6)
    expected = [[K.matern_half(x, z, 1.7, 0.6) for z in Z] for x in X]
    np.testing.assert_allclose(kern(X, Z), expected, rtol=1e-12)
    rbf = K.StationaryKernel("rbf", 1.7, 0.6)
    expected = [[1.7 * math.exp(-np.sum((x - z) ** 2) / (2 * 0.36)) for z in Z] for x in X]
    np.testing.assert_allclose(rbf(X, Z), expected, rtol=1e-12)


# gradients ------------------------------------------------------------------------------

def flat_objective(variant, base, rows, y, prior=None):
    def f(u):
        return K.param_gradient(variant, variant.from_unconstrained(u, base), rows, y, prior)
    return f


@pytest.mark.parametrize("tag", K.VARIANT_TAGS)
def test_param_gradient_finite_difference(rng, tag):
    for _ in range(20):
        rows = random_batch(rng, int(rng.integers(5, 15)), int(rng.integers(1, 3)))
        y = rng.normal(size=len(rows))
        variant = K.make_variant(tag, rows)
        base = random_params(rng, variant)
        f = flat_objective(variant, base, rows, y)
        u0 = variant.to_unconstrained(base)
        _, g = f(u0)
        fd = np.empty_like(u0)
        for i in range(len(u0)):
            h = 1e-5 * max(1.0, abs(u0[i]))
            e = np.zeros_like(u0)
            e[i] = h
            fd[i] = (f(u0 + e)[0] - f(u0 - e)[0]) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-6 * (1 + np.max(np.abs(fd))))


def test_param_gradient_zero_targets_only_determinant(rng):
    rows = random_batch(rng, 8, 2)
    variant = K.make_variant("a-prbf", rows)
    base = random_params(rng, variant)
    u0 = variant.to_unconstrained(base)
    _, g = K.param_gradient(variant, base, rows, np.zeros(8))

    def half_logdet(u):
        p = variant.from_unconstrained(u, base)
        kmat = K.gram(variant, p, rows, rows) + p.noise_var * np.eye(8)
        return -0.5 * np.linalg.slogdet(kmat)[1]

    fd = [(half_logdet(u0 + 1e-6 * e) - half_logdet(u0 - 1e-6 * e)) / 2e-6 for e in np.eye(len(u0))]
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_bound_kernel_is_gram(rng):
    rows = random_batch(rng, 5, 1)
    variant = K.make_variant("prbf", rows)
    params = random_params(rng, variant)
    np.testing.assert_array_equal(K.BoundKernel(variant, params)(rows, rows), K.gram(variant, params, rows, rows))

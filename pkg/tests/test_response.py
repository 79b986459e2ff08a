import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.stats import norm

from gpdr import gp_core, kernels as K, response as R
from gpdr.errors import DegenerateTargets, NegativeValue


def toy_rows(rng, n=30, d=2, ps_var=0.05):
    X = rng.normal(size=(n, d))
    t = rng.normal(size=n)
    return R.theta_batch(0.3 * X[:, 0] + rng.normal(scale=0.1, size=n), np.full(n, ps_var), X, t)


# priors ---------------------------------------------------------------------------------

def test_prior_scales_for_unit_sd():
    y = np.array([-1.0, 1.0])
    y = y / np.std(y, ddof=1)
    spec = R.build_prior_spec(y)
    assert spec.gamma_scale == pytest.approx(2 / 0.674490, rel=1e-6)
    assert spec.omega_scale == pytest.approx(0.5 / 0.674490, rel=1e-6)
    assert spec.gamma_scale == pytest.approx(2.965, abs=1e-3)
    assert spec.omega_scale == pytest.approx(0.741, abs=1e-3)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30).filter(lambda v: np.std(v) > 1e-3),
       st.floats(0.01, 100))
def test_prior_ratio_and_homogeneity(values, c):
    y = np.array(values)
    a, b = R.build_prior_spec(y), R.build_prior_spec(c * y)
    assert a.gamma_scale / a.omega_scale == pytest.approx(4.0, rel=1e-12)
    assert b.gamma_scale == pytest.approx(c * a.gamma_scale, rel=1e-9)
    assert b.omega_scale == pytest.approx(c * a.omega_scale, rel=1e-9)


def test_prior_lengthscales_follow_column_sd(rng):
    rows = toy_rows(rng)
    spec = R.build_prior_spec(rng.normal(size=len(rows)), rows)
    np.testing.assert_allclose(spec.lengthscale_scales, np.std(rows.means, axis=0, ddof=1), rtol=1e-12)


@pytest.mark.parametrize("y", [[1.0, 1.0, 1.0], [2.0]])
def test_prior_degenerate_targets(y):
    with pytest.raises(DegenerateTargets):
        R.build_prior_spec(y)


def test_half_normal_examples():
    assert R.half_normal_log_density(0.0, 1.0) == pytest.approx(-0.225791, abs=1e-6)
    assert R.half_normal_log_density(1.0, 1.0) == pytest.approx(-0.725791, abs=1e-6)
    assert R.half_normal_log_density(0.7, 2.0) == pytest.approx(math.log(2 * norm.pdf(0.7, scale=2.0)), abs=1e-12)


@pytest.mark.parametrize("scale", [0.3, 1.0, 4.2])
def test_half_normal_integrates_to_one(scale):
    total, _ = integrate.quad(lambda v: math.exp(R.half_normal_log_density(v, scale)), 0, np.inf)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_half_normal_rejects_negative():
    with pytest.raises(NegativeValue):
        R.half_normal_log_density(-0.1, 1.0)


@pytest.mark.parametrize("tag", K.VARIANT_TAGS)
def test_log_prior_gradient_finite_difference(rng, tag):
    rows = toy_rows(rng, n=12)
    variant = K.make_variant(tag, rows)
    spec = R.build_prior_spec(rng.normal(size=12), rows)
    fn = R.log_prior(variant, spec)
    u = variant.to_unconstrained(R.initial_params(variant, rows, rng.normal(size=12))) + rng.normal(scale=0.3, size=len(variant.param_names()))
    _, grad = fn(u)
    h = 1e-6
    for i in range(len(u)):
        e = np.zeros_like(u)
        e[i] = h
        fd = (fn(u + e)[0] - fn(u - e)[0]) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-8)


@pytest.mark.parametrize("tag", K.VARIANT_TAGS)
def test_map_objective_bounded_by_lml_plus_max_prior(rng, tag):
    rows = toy_rows(rng, n=15)
    y = rng.normal(size=15)
    variant = K.make_variant(tag, rows)
    spec = R.build_prior_spec(y, rows)
    fn = R.log_prior(variant, spec)
    base = R.initial_params(variant, rows, y)
    for _ in range(10):
        u = variant.to_unconstrained(base) + rng.normal(scale=0.5, size=len(variant.param_names()))
        params = variant.from_unconstrained(u, base)
        lml, _ = K.param_gradient(variant, params, rows, y)
        penalized, _ = K.param_gradient(variant, params, rows, y, fn)
        # the largest value of each half-Normal log density is at v = 0
        ceiling = fn(np.full_like(u, -np.inf))[0]
        assert penalized <= lml + ceiling + 1e-9


# fitting --------------------------------------------------------------------------------

def test_zero_response_gives_zero_adrf(rng):
    rows = toy_rows(rng, n=20)
    fit = R.fit_response(rows, np.zeros(20), "a-prbf", epochs=50, lr=0.01)
    post = R.adrf_posterior(fit, rows)
    assert np.max(np.abs(post.means)) < 1e-3
    other = toy_rows(np.random.default_rng(5), n=7)
    assert np.max(np.abs(R.adrf_posterior(fit, other).means)) < 1e-3


@pytest.mark.parametrize("tag", K.VARIANT_TAGS)
def test_fit_ascends(rng, tag):
    rows = toy_rows(rng, n=25)
    y = np.sin(rows.means[:, 1]) + 0.5 * rows.means[:, -1] + rng.normal(scale=0.2, size=25)
    fit = R.fit_response(rows, y, tag, epochs=150, lr=0.01)
    assert fit.trace[-1] >= fit.trace[0] - 1e-6
    assert len(fit.trace) == 151


def test_convergence_diagnostic_on_long_fit(rng):
    rows = toy_rows(rng, n=25)
    y = np.sin(rows.means[:, 1]) + 0.5 * rows.means[:, -1] + rng.normal(scale=0.2, size=25)
    fit = R.fit_response(rows, y, "a-prbf", epochs=3000, lr=0.01)
    change = abs(fit.trace[-1] - fit.trace[-101])
    assert change <= 1e-3 * abs(fit.trace[-1])
    assert fit.converged()


def test_interpolation_in_low_noise_regime(rng):
    rows = toy_rows(rng, n=15)
    y = 3.0 * np.cos(rows.means[:, 1]) + rows.means[:, -1]
    variant = K.make_variant("a-prbf", rows)
    params = K.KernelParams(gamma_sq=4.0, omega_sq=1.0, lengthscales=np.ones(3), rho=1.0, noise_var=1e-10)
    fit = R.fit_response(rows, y, variant, epochs=1, lr=1e-12, init=params)
    post = R.adrf_posterior(fit, rows)
    assert np.max(np.abs(post.means - y)) <= 1e-3 * np.std(y, ddof=1)


def test_posterior_equivariant_and_nonnegative_sd(rng):
    rows = toy_rows(rng, n=20)
    y = rows.means[:, 1] + rows.means[:, -1] + rng.normal(scale=0.1, size=20)
    fit = R.fit_response(rows, y, "a-prbf", epochs=60, lr=0.01)
    test = toy_rows(np.random.default_rng(2), n=9)
    post = R.adrf_posterior(fit, test)
    perm = np.random.default_rng(3).permutation(9)
    post_p = R.adrf_posterior(fit, test.take(perm))
    np.testing.assert_allclose(post_p.means, post.means[perm], rtol=0, atol=1e-12)
    np.testing.assert_allclose(post_p.cov, post.cov[np.ix_(perm, perm)], rtol=0, atol=1e-12)
    assert np.all(post.per_point_sd >= 0)


def test_zero_variance_a_prbf_bitwise_equals_a_rbf(rng):
    rows = toy_rows(rng, n=25, ps_var=0.0)
    y = rows.means[:, 0] * 2 + rows.means[:, -1] + rng.normal(scale=0.3, size=25)
    a = R.fit_response(rows, y, "a-prbf", epochs=200, lr=0.01, seed=4)
    b = R.fit_response(rows, y, "a-rbf", epochs=200, lr=0.01, seed=4)
    assert np.array_equal(a.trace, b.trace)
    assert np.array_equal(a.gp.weights, b.gp.weights)
    pa, pb = R.adrf_posterior(a, rows), R.adrf_posterior(b, rows)
    assert np.array_equal(pa.means, pb.means) and np.array_equal(pa.cov, pb.cov)


def test_theta_batch_layout():
    rows = R.theta_batch([0.5, 0.1], [0.2, 0.3], [[1.0, 2.0], [3.0, 4.0]], [7.0, 8.0])
    np.testing.assert_array_equal(rows.means, [[0.5, 1, 2, 7], [0.1, 3, 4, 8]])
    np.testing.assert_array_equal(rows.variances, [[0.2, 0, 0, 0], [0.3, 0, 0, 0]])
    same = R.rows_to_batch([R.ThetaRow(0.5, 0.2, [1.0, 2.0], 7.0), R.ThetaRow(0.1, 0.3, [3.0, 4.0], 8.0)])
    np.testing.assert_array_equal(same.means, rows.means)
    with pytest.raises(ValueError):
        R.ThetaRow(0.0, -1.0, [1.0], 0.0)


def test_averaged_adrf_matches_explicit_average(rng):
    rows = toy_rows(rng, n=12)
    y = rows.means[:, 1] + 2 * rows.means[:, -1]
    fit = R.fit_response(rows, y, "a-prbf", epochs=40, lr=0.01)
    avg = R.averaged_adrf(fit, rows, [0.3])
    post = R.adrf_posterior(fit, R.with_treatment(rows, 0.3))
    w = np.full(12, 1 / 12)
    assert avg.means[0] == pytest.approx(w @ post.means, abs=1e-10)
    assert avg.sd[0] == pytest.approx(math.sqrt(max(w @ post.cov @ w, 0.0)), rel=1e-6, abs=1e-8)


# credible intervals ---------------------------------------------------------------------

def test_credible_interval_examples():
    lo, hi = R.credible_interval((np.array([0.0]), np.array([1.0])))
    assert lo[0] == pytest.approx(-1.644854, abs=1e-6)
    assert hi[0] == pytest.approx(1.644854, abs=1e-6)
    lo, hi = R.credible_interval((np.array([2.5]), np.array([0.0])))
    assert lo[0] == hi[0] == 2.5


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(0, 50)), min_size=1, max_size=20))
def test_credible_interval_width_and_monotone(pairs):
    means = np.array([p[0] for p in pairs])
    sd = np.array([p[1] for p in pairs])
    lo, hi = R.credible_interval((means, sd), 0.90)
    np.testing.assert_allclose(hi - lo, 2 * norm.ppf(0.95) * sd, rtol=1e-12, atol=1e-12)
    lo95, hi95 = R.credible_interval((means, sd), 0.95)
    assert np.all(lo95 <= lo) and np.all(hi95 >= hi)


def test_credible_interval_rejects_bad_level():
    with pytest.raises(ValueError):
        R.credible_interval((np.zeros(1), np.ones(1)), 1.0)


def test_credible_interval_from_posterior():
    post = gp_core.GaussianPosterior(np.array([1.0, 2.0]), np.diag([4.0, 0.0]))
    lo, hi = R.credible_interval(post)
    np.testing.assert_allclose(lo, [1 - 2 * 1.6448536269514722, 2.0], rtol=1e-12)


# replicated full simulation ---------------------------------------------------------------

@pytest.mark.slow
def test_a_prbf_covers_better_than_rbf_nd_on_most_seeds(full_sim_records):
    _, per_rep, _ = full_sim_records
    cov = {(r.method, r.replication): r.cov90 for r in per_rep}
    reps = sorted({r.replication for r in per_rep})
    wins = sum(cov[("a-prbf", k)] > cov[("rbf-nd", k)] for k in reps)
    print(f"A-PRBF coverage above RBF-ND on {wins}/{len(reps)} seeds")
    assert wins >= 7

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from bayesarch import autodiff as ad
from bayesarch import distributions as D
from bayesarch.autodiff import Tensor, parameter


def bern_density_exact(s, prob, tau):
    p = D.ConcreteBernoulliParams.from_prob(prob, tau)
    return math.exp(D.concrete_bernoulli_log_density(
        Tensor(math.log(s)), Tensor(math.log1p(-s)), p).item())


def bern_density(s, prob, tau):
    p = D.ConcreteBernoulliParams.from_prob(prob, tau)
    return math.exp(D.log_density_concrete_bernoulli(np.array(s), p).item())


def cat2_density(s1, probs, tau):
    p = D.ConcreteCategoricalParams.from_probs(probs, tau)
    return math.exp(D.log_density_concrete_categorical(np.array([s1, 1.0 - s1]), p).item())


# --------------------------------------------------------------------------
# Gaussian


def test_gaussian_sample_zero_noise_and_collapsed_sigma():
    post = D.GaussianPosterior(parameter(np.array([0.3, -1.2])), parameter(np.array([0.5, -0.1])))
    np.testing.assert_array_equal(D.sample_gaussian(post, np.zeros(2)).data, post.mean.data)
    tight = D.GaussianPosterior(parameter(np.array([0.3])), parameter(np.array([-60.0])))
    assert D.sample_gaussian(tight, np.array([3.0])).item() == pytest.approx(0.3, abs=1e-20)


def test_gaussian_sample_shape_mismatch():
    post = D.GaussianPosterior(parameter(np.zeros(3)), parameter(np.zeros(3)))
    with pytest.raises(ad.ShapeError):
        D.sample_gaussian(post, np.zeros(2))
    with pytest.raises(ad.ShapeError):
        D.GaussianPosterior(parameter(np.zeros(3)), parameter(np.zeros(2)))


def test_gaussian_sample_empirical_mean():
    rng = np.random.default_rng(0)
    post = D.GaussianPosterior(parameter(np.array([1.5])), parameter(np.array([0.3])))
    n = 100_000
    draws = D.sample_gaussian(D.GaussianPosterior(Tensor(np.full(n, 1.5)), Tensor(np.full(n, 0.3))),
                              rng.standard_normal(n)).data
    assert abs(draws.mean() - 1.5) < 4 * post.sigma[0] / math.sqrt(n)


def test_gaussian_kl_closed_form_values():
    same = D.GaussianPosterior(parameter(np.zeros(4)), parameter(np.full(4, D.softplus_inverse(1.3))))
    assert D.kl_gaussian_analytic(same, D.GaussianPrior(1.3)).item() == pytest.approx(0.0, abs=1e-12)
    unit = D.GaussianPosterior(parameter(np.array([1.0])), parameter(np.array([D.softplus_inverse(1.0)])))
    assert D.kl_gaussian_analytic(unit, D.GaussianPrior(1.0)).item() == pytest.approx(0.5, abs=1e-12)


def test_gaussian_kl_matches_monte_carlo():
    rng = np.random.default_rng(1)
    mean, sigma, s0 = rng.normal(size=5), rng.uniform(0.2, 1.5, 5), 0.9
    post = D.GaussianPosterior(parameter(mean), parameter(D.softplus_inverse(sigma)))
    exact = D.kl_gaussian_analytic(post, D.GaussianPrior(s0)).item()
    w = mean + sigma * rng.standard_normal((100_000, 5))
    mc = np.mean(np.sum(stats.norm.logpdf(w, mean, sigma) - stats.norm.logpdf(w, 0.0, s0), axis=1))
    assert abs(mc - exact) / exact < 0.02


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=5), st.floats(-4, 3), st.floats(0.1, 5))
def test_gaussian_kl_nonnegative(means, rho, s0):
    post = D.GaussianPosterior(Tensor(np.array(means)), Tensor(np.full(len(means), rho)))
    assert D.kl_gaussian_analytic(post, D.GaussianPrior(s0)).item() >= -1e-12


def test_prior_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        D.GaussianPrior(0.0)


# --------------------------------------------------------------------------
# concrete categorical


def test_uniform_probs_equal_noise_gives_barycentre():
    p = D.ConcreteCategoricalParams.from_probs(np.full(4, 0.25), 1.3)
    s = D.sample_concrete_categorical(p, np.full(4, 0.7)).data
    np.testing.assert_allclose(s, 0.25)


def test_low_temperature_is_nearly_one_hot():
    # max(s) <= 0.999 iff |log 9 + L| <= tau * log 999 with L = g1 - g2 ~ Logistic(0, 1)
    tau, n = 0.01, 100_000
    c = tau * math.log(999.0)
    p_soft = stats.logistic.cdf(c - math.log(9)) - stats.logistic.cdf(-c - math.log(9))
    assert 1 - p_soft > 0.98
    rng = np.random.default_rng(2)
    p = D.ConcreteCategoricalParams.from_probs([0.9, 0.1], tau)
    s = D.sample_concrete_categorical(p, D.gumbel_noise(rng, (n, 2))).data
    hit = np.mean(s.max(axis=1) > 0.999)
    assert abs(hit - (1 - p_soft)) < 4 * math.sqrt(p_soft * (1 - p_soft) / n)


@pytest.mark.parametrize("tau", [0.5, 1.0, 3.0])
def test_gumbel_max_law(tau):
    rng = np.random.default_rng(int(tau * 10))
    probs = np.array([0.05, 0.15, 0.3, 0.5])
    n = 100_000
    p = D.ConcreteCategoricalParams.from_probs(probs, tau)
    s = D.sample_concrete_categorical(p, D.gumbel_noise(rng, (n, 4))).data
    freq = np.bincount(s.argmax(axis=1), minlength=4) / n
    assert np.all(np.abs(freq - probs) <= 4 * np.sqrt(probs * (1 - probs) / n))


def test_log_sample_matches_sample():
    rng = np.random.default_rng(3)
    p = D.ConcreteCategoricalParams.from_probs([0.2, 0.5, 0.3], 0.8)
    g = D.gumbel_noise(rng, (10, 3))
    np.testing.assert_allclose(np.exp(D.concrete_categorical_log_sample(p, g).data),
                               D.sample_concrete_categorical(p, g).data, rtol=1e-12)


def test_zero_probability_rejected():
    with pytest.raises(ValueError):
        D.ConcreteCategoricalParams.from_probs([0.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        D.ConcreteBernoulliParams.from_prob(1.0, 1.0)


def test_off_simplex_point_rejected():
    p = D.ConcreteCategoricalParams.from_probs([0.5, 0.5], 1.0)
    with pytest.raises(ValueError):
        D.log_density_concrete_categorical(np.array([0.5, 0.6]), p)


@pytest.mark.parametrize("probs,tau", [([0.3, 0.7], 0.5), ([0.5, 0.5], 1.0), ([0.9, 0.1], 3.0)])
def test_categorical_k2_quadrature(probs, tau):
    total, _ = integrate.quad(cat2_density, 0.0, 1.0, args=(probs, tau), limit=200, points=[0.5])
    assert total == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize("probs,tau", [([0.3, 0.7], 0.5), ([0.2, 0.8], 2.0), ([0.9, 0.1], 3.0)])
def test_categorical_k2_equals_binary(probs, tau):
    for s1 in [0.01, 0.3, 0.5, 0.77, 0.999]:
        assert cat2_density(s1, probs, tau) == pytest.approx(
            bern_density(s1, probs[0] / sum(probs), tau), rel=1e-9)


def test_categorical_k3_integrates_to_one():
    # the density is w.r.t. Lebesgue measure on the first K-1 coordinates
    p = D.ConcreteCategoricalParams.from_probs([0.2, 0.3, 0.5], 1.5)

    def f(s2, s1):
        return math.exp(D.concrete_categorical_log_density(
            Tensor(np.log([s1, s2, 1.0 - s1 - s2])), p).item())

    total, _ = integrate.dblquad(f, 0.0, 1.0, 0.0, lambda s1: 1.0 - s1, epsabs=1e-5)
    assert total == pytest.approx(1.0, abs=0.01)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.floats(0.3, 4.0), st.integers(0, 10_000))
def test_categorical_density_permutation_invariant(K, tau, seed):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(K)) + 1e-3
    probs /= probs.sum()
    s = rng.dirichlet(np.ones(K)) * (1 - K * 1e-4) + 1e-4
    perm = rng.permutation(K)
    a = D.log_density_concrete_categorical(s, D.ConcreteCategoricalParams.from_probs(probs, tau)).item()
    b = D.log_density_concrete_categorical(
        s[perm], D.ConcreteCategoricalParams.from_probs(probs[perm], tau)).item()
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


def test_log_space_density_survives_underflow():
    # at tiny temperature s underflows in linear space; the log-space form stays finite
    p = D.ConcreteCategoricalParams.from_probs(np.full(50, 0.02), 0.005)
    g = D.gumbel_noise(np.random.default_rng(4), 50)
    log_s = D.concrete_categorical_log_sample(p, g)
    assert np.exp(log_s.data).min() == 0.0
    assert np.isfinite(D.concrete_categorical_log_density(log_s, p).item())


# --------------------------------------------------------------------------
# binary concrete


def test_bernoulli_sample_symmetric_point():
    for tau in [0.3, 1.0, 3.0]:
        p = D.ConcreteBernoulliParams.from_prob(0.5, tau)
        assert D.sample_concrete_bernoulli(p, 0.0).item() == 0.5


def test_bernoulli_low_temperature_limit():
    p = D.ConcreteBernoulliParams.from_prob(0.9, 1e-3)
    assert D.sample_concrete_bernoulli(p, 0.0).item() > 1 - 1e-12


@pytest.mark.parametrize("prob", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("tau", [0.5, 1.0, 3.0])
def test_bernoulli_sign_frequency(prob, tau):
    rng = np.random.default_rng(5)
    n = 100_000
    p = D.ConcreteBernoulliParams.from_prob(prob, tau)
    s = D.sample_concrete_bernoulli(p, D.logistic_noise(rng, n)).data
    assert abs(np.mean(s > 0.5) - prob) <= 4 * math.sqrt(prob * (1 - prob) / n)


@pytest.mark.parametrize("prob", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("tau", [0.5, 1.0, 3.0])
def test_bernoulli_quadrature(prob, tau):
    # integrate over s in (0, 1) through s = sigmoid(u); for tau < 1 the density has
    # integrable endpoint singularities that the substitution flattens
    params = D.ConcreteBernoulliParams.from_prob(prob, tau)

    def integrand(u):
        log_s, log_1ms = -np.logaddexp(0.0, -u), -np.logaddexp(0.0, u)
        lp = D.concrete_bernoulli_log_density(Tensor(log_s), Tensor(log_1ms), params).item()
        return math.exp(lp + log_s + log_1ms)

    total, _ = integrate.quad(integrand, -40.0, 40.0, limit=400, points=[0.0], epsabs=1e-10)
    assert total == pytest.approx(1.0, abs=0.001)


def test_bernoulli_clamped_density_agrees_inside_range():
    for s in [1e-5, 0.2, 0.5, 1 - 1e-5]:
        assert bern_density(s, 0.3, 0.7) == pytest.approx(bern_density_exact(s, 0.3, 0.7), rel=1e-12)


@pytest.mark.parametrize("prob", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("tau", [0.5, 1.0, 3.0])
def test_bernoulli_density_matches_change_of_variables(prob, tau):
    # s = sigmoid((logit(pi) + L) / tau) with L ~ Logistic(0, 1)
    logit = math.log(prob / (1 - prob))
    for s in [0.05, 0.4, 0.5, 0.83]:
        u = math.log(s / (1 - s))
        expected = stats.logistic.pdf(tau * u - logit) * tau / (s * (1 - s))
        assert bern_density(s, prob, tau) == pytest.approx(expected, rel=1e-9)


def test_bernoulli_uniform_at_half_and_unit_temperature():
    for s in [0.1, 0.5, 0.9]:
        assert bern_density(s, 0.5, 1.0) == pytest.approx(1.0, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.2, 5.0), st.floats(0.001, 0.999))
def test_bernoulli_reflection_symmetry(prob, tau, s):
    assert bern_density(s, prob, tau) == pytest.approx(bern_density(1 - s, 1 - prob, tau), rel=1e-9)


def test_bernoulli_out_of_range_rejected():
    p = D.ConcreteBernoulliParams.from_prob(0.5, 1.0)
    with pytest.raises(ValueError):
        D.log_density_concrete_bernoulli(np.array(1.2), p)


# --------------------------------------------------------------------------
# size probabilities


def test_size_probs_small_grid_value():
    p = D.size_probs(D.TruncNormSizeParams.from_sigma(2.0, 1.0, 3), floor=0.0).data
    e = np.exp(-0.5)
    np.testing.assert_allclose(p, [e / (1 + 2 * e), 1 / (1 + 2 * e), e / (1 + 2 * e)], rtol=1e-12)
    np.testing.assert_allclose(D.size_probs(D.TruncNormSizeParams.from_sigma(2.0, 1.0, 3)).data,
                               [0.274, 0.452, 0.274], atol=5e-4)


def test_size_probs_symmetric_about_centre():
    K = 9
    p = D.size_probs(D.TruncNormSizeParams.from_sigma((K + 1) / 2, 2.3, K)).data
    np.testing.assert_allclose(p, p[::-1], rtol=1e-12)


def test_size_probs_collapse_to_one_hot():
    p = D.size_probs(D.TruncNormSizeParams.from_sigma(7.0, 1e-3, 12)).data
    assert p[6] == pytest.approx(1.0, abs=1e-4)
    exact = D.size_probs(D.TruncNormSizeParams.from_sigma(7.0, 1e-3, 12), floor=0.0).data
    assert exact[6] == 1.0


def test_size_probs_match_truncated_normal_mass_ratio():
    # grid values are proportional to scipy's truncated normal density on [1, K]
    mu, sigma, K = 4.3, 2.1, 10
    grid = np.arange(1, K + 1)
    a, b = (1 - mu) / sigma, (K - mu) / sigma
    ref = stats.truncnorm.pdf(grid, a, b, loc=mu, scale=sigma)
    p = D.size_probs(D.TruncNormSizeParams.from_sigma(mu, sigma, K), floor=0.0).data
    np.testing.assert_allclose(p, ref / ref.sum(), rtol=1e-10)
    floored = D.size_probs(D.TruncNormSizeParams.from_sigma(mu, sigma, K)).data
    np.testing.assert_allclose(floored, (p + D.PROB_FLOOR) / (1 + K * D.PROB_FLOOR), rtol=1e-10)


@settings(max_examples=80, deadline=None)
@given(st.floats(-20, 80), st.floats(0.05, 30), st.integers(1, 60))
def test_size_probs_simplex_and_unimodal(mu, sigma, K):
    p = D.size_probs(D.TruncNormSizeParams.from_sigma(mu, sigma, K)).data
    assert abs(p.sum() - 1) < 1e-9
    d = np.diff(p)
    # once decreasing, never increasing again
    signs = np.sign(d[np.abs(d) > 1e-15])
    assert not np.any((signs[:-1] < 0) & (signs[1:] > 0))


def test_size_probs_grad_check():
    w = np.random.default_rng(6).normal(size=8)
    mu, raw = parameter(3.2), parameter(0.4)
    res = ad.grad_check_params(
        lambda: ad.sum(ad.mul(D.size_log_probs(D.TruncNormSizeParams(mu, raw, 8)), w)), [mu, raw])
    assert res.error < 1e-4


def test_concrete_samplers_grad_check():
    g = D.gumbel_noise(np.random.default_rng(7), 5)
    w = np.arange(5.0)

    def f(v):
        q = D.ConcreteCategoricalParams(ad.log_softmax(v), 1.7)
        return ad.sum(ad.mul(D.sample_concrete_categorical(q, g), w))

    assert ad.grad_check(f, np.array([0.1, -0.3, 0.5, 1.0, -1.2])).error < 1e-4

    def h(v):
        q = D.ConcreteBernoulliParams(ad.sum(v), 0.8)
        ls, l1 = D.concrete_bernoulli_log_sample(q, 0.37)
        return ad.add(D.concrete_bernoulli_log_density(ls, l1, q), ad.square(ad.exp(ls)))

    assert ad.grad_check(h, np.array([0.4])).error < 1e-4


# --------------------------------------------------------------------------
# Monte-Carlo KL


def _bern_sampler(params, rng):
    def sample(n):
        return D.concrete_bernoulli_log_sample(params, D.logistic_noise(rng, n))
    return sample


def test_mc_kl_identical_distributions_is_zero():
    rng = np.random.default_rng(8)
    q = D.ConcreteCategoricalParams.from_probs([0.1, 0.2, 0.3, 0.4], 1.0)
    est = D.mc_kl(lambda s: D.concrete_categorical_log_density(s, q),
                  lambda s: D.concrete_categorical_log_density(s, q),
                  lambda n: D.concrete_categorical_log_sample(q, D.gumbel_noise(rng, (n, 4))),
                  100_000)
    assert abs(est.item()) < 0.01


def test_mc_kl_binary_matches_quadrature_and_is_stable():
    q = D.ConcreteBernoulliParams.from_prob(0.9, 1.0)
    p = D.ConcreteBernoulliParams.from_prob(0.1, 1.0)

    def kl_integrand(s):
        lq = math.log(bern_density(s, 0.9, 1.0))
        lp = math.log(bern_density(s, 0.1, 1.0))
        return math.exp(lq) * (lq - lp)

    exact, _ = integrate.quad(kl_integrand, 1e-9, 1 - 1e-9, limit=400, points=[0.5])
    ests = []
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        ests.append(D.mc_kl(lambda s: D.concrete_bernoulli_log_density(*s, q),
                            lambda s: D.concrete_bernoulli_log_density(*s, p),
                            _bern_sampler(q, rng), 100_000).item())
    assert min(ests) > 0
    for e in ests:
        assert abs(e - exact) / exact < 0.05


def test_mc_kl_names_bad_sample():
    prev = ad.set_finite_check(False)
    try:
        with pytest.raises(FloatingPointError, match="index 2"):
            D.mc_kl(lambda s: Tensor(np.array([0.0, 1.0, np.nan])),
                    lambda s: Tensor(np.zeros(3)), lambda n: None, 3)
    finally:
        ad.set_finite_check(prev)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesarch import layers as L
from bayesarch import training as T
from bayesarch.autodiff import Tensor
from bayesarch.predictive import PredictiveResult, per_sample_logliks, predict, rmse, test_loglik


def bayes_net(seed=0, sigma=0.3):
    spec = L.mlp_spec(1, [10], 1, weight_mode="gaussian", size=L.SizePriorSpec(5, 2, 3.0),
                      init_sigma=sigma)
    return L.Network.from_spec(spec, np.random.default_rng(seed))


X = np.linspace(-2, 2, 25)[:, None]


def test_point_network_samples_identical():
    net = L.Network.from_spec(L.mlp_spec(1, [10], 1), np.random.default_rng(0))
    pr = predict(net, X, 5, np.random.default_rng(1))
    for s in pr.samples:
        np.testing.assert_array_equal(s, pr.samples[0])
    np.testing.assert_allclose(pr.mean, net.forward_hard(X))


def test_single_sample_mean_is_the_sample():
    pr = predict(bayes_net(), X, 1, np.random.default_rng(2))
    np.testing.assert_array_equal(pr.mean, pr.samples[0])
    with pytest.raises(ValueError):
        predict(bayes_net(), X, 0, np.random.default_rng(2))


def test_mean_is_average_of_samples():
    pr = predict(bayes_net(), X, 7, np.random.default_rng(3))
    np.testing.assert_allclose(pr.mean, np.mean(pr.samples, axis=0), rtol=1e-12)


def test_predict_reproducible():
    a = predict(bayes_net(), X, 5, np.random.default_rng(4))
    b = predict(bayes_net(), X, 5, np.random.default_rng(4))
    np.testing.assert_array_equal(a.mean, b.mean)


def test_mc_mean_variance_scales_inverse_n():
    net = bayes_net(5, sigma=0.5)
    x = np.array([[0.7]])
    ns = np.array([1, 2, 4, 8, 16, 32])
    rng = np.random.default_rng(6)
    draws = np.array([predict(net, x, 1, rng).mean.item() for _ in range(400 * 32)])
    var = [np.var(draws[: 400 * n].reshape(400, n).mean(axis=1), ddof=1) for n in ns]
    slope = np.polyfit(np.log(ns), np.log(var), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_rmse_values():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5))
    with pytest.raises(ValueError):
        rmse([], [])
    with pytest.raises(ValueError):
        rmse([1.0], [1.0, 2.0])


def test_constant_predictor_on_standardized_targets():
    y = np.random.default_rng(7).gamma(2.0, size=400)
    z = (y - y.mean()) / y.std()
    assert rmse(np.zeros_like(z), z) == pytest.approx(1.0, abs=0.05)


def test_single_sample_loglik_reduces_to_gaussian():
    rng = np.random.default_rng(8)
    pred, y = rng.normal(size=20), rng.normal(size=20)
    pr = PredictiveResult(pred, [pred], 1)
    ref = T.gaussian_loglik(Tensor(pred), y, 0.6).item() / 20
    assert test_loglik(pr, y, 0.6) == pytest.approx(ref)


def test_loglik_matches_direct_log_mean_exp():
    rng = np.random.default_rng(9)
    samples = [rng.normal(size=6) for _ in range(4)]
    y = rng.normal(size=6)
    pr = PredictiveResult(np.mean(samples, axis=0), samples, 4)
    dens = np.array([np.exp(-0.5 * ((s - y) / 0.8) ** 2) / (0.8 * math.sqrt(2 * math.pi)) for s in samples])
    assert test_loglik(pr, y, 0.8) == pytest.approx(np.mean(np.log(dens.mean(axis=0))))


def test_categorical_loglik():
    probs = np.array([[0.7, 0.3], [0.2, 0.8]])
    pr = PredictiveResult(probs, [probs], 1)
    lk = L.Likelihood("categorical")
    assert test_loglik(pr, [0, 1], lk) == pytest.approx(np.mean(np.log([0.7, 0.8])))


def test_empty_test_set_rejected():
    pr = PredictiveResult(np.zeros(0), [np.zeros(0)], 1)
    with pytest.raises(ValueError):
        test_loglik(pr, np.zeros(0), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 10), st.integers(0, 10_000), st.floats(0.1, 3.0))
def test_jensen_bound(n_samples, n_points, seed, sigma):
    rng = np.random.default_rng(seed)
    samples = [rng.normal(size=n_points) for _ in range(n_samples)]
    y = rng.normal(size=n_points)
    pr = PredictiveResult(np.mean(samples, axis=0), samples, n_samples)
    lme = test_loglik(pr, y, sigma)
    mean_ll = per_sample_logliks(pr, y, sigma).mean()
    assert lme >= mean_ll - 1e-12

import math

import numpy as np
import pytest

from bayesarch import autodiff as ad
from bayesarch import layers as L
from bayesarch import training as T
from bayesarch.data import Dataset, toy_periodic
from bayesarch.predictive import predict, test_loglik


def small_data(n=64, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, (n, 2))
    y = np.sin(x[:, 0]) + 0.3 * x[:, 1] + 0.05 * rng.normal(size=n)
    return Dataset(x, y)


def net_from(spec, seed=0):
    return L.Network.from_spec(spec, np.random.default_rng(seed))


# --------------------------------------------------------------------------
# likelihood


def test_gaussian_loglik_values():
    p = ad.Tensor(np.array([[0.3], [1.2]]))
    assert T.gaussian_loglik(p, [0.3, 1.2], 1.0).item() == pytest.approx(-math.log(2 * math.pi))
    sig = 0.7
    v = T.gaussian_loglik(ad.Tensor(np.zeros(3)), np.full(3, sig), sig).item()
    assert v == pytest.approx(3 * (-0.5 * math.log(2 * math.pi * sig**2) - 0.5))
    with pytest.raises(ValueError):
        T.gaussian_loglik(p, [0, 0], 0.0)


def test_categorical_loglik_matches_numpy():
    logits = np.random.default_rng(0).normal(size=(4, 3))
    labels = np.array([0, 2, 1, 2])
    ref = np.sum(logits[np.arange(4), labels] - np.log(np.exp(logits).sum(axis=1)))
    assert T.categorical_loglik(ad.Tensor(logits), labels).item() == pytest.approx(ref)


# --------------------------------------------------------------------------
# ELBO


def test_point_network_has_no_kl():
    ds = small_data()
    net = net_from(L.mlp_spec(2, [8], 1))
    terms, _ = T.elbo_step(net, (ds.x[:16], ds.y[:16]), len(ds), np.random.default_rng(0))
    assert terms.kl_weights == 0.0 and terms.kl_arch == 0.0
    out = net.forward_hard(ds.x[:16])
    ll = T.gaussian_loglik(ad.Tensor(out), ds.y[:16], 1.0).item()
    assert terms.total == pytest.approx(-ll * len(ds) / 16)


def test_prior_initialised_posterior_has_zero_weight_kl():
    ds = small_data()
    net = net_from(L.mlp_spec(2, [8], 1, weight_mode="gaussian", init="prior"))
    terms, _ = T.elbo_step(net, (ds.x[:8], ds.y[:8]), len(ds), np.random.default_rng(0))
    assert terms.kl_weights == pytest.approx(0.0, abs=1e-12)


def test_full_elbo_grad_check():
    ds = small_data(12)
    spec = L.mlp_spec(2, [3, 3], 1, weight_mode="gaussian", size=L.SizePriorSpec(2, 1, 3.0),
                      skip=L.SkipPriorSpec(0.2, 1.0), likelihood=L.Likelihood("gaussian", 0.5))
    net = net_from(spec, 1)
    noise = net.sample_noise(np.random.default_rng(2))
    # identity hidden activations avoid ReLU kinks under finite differences
    for b in net.blocks:
        object.__setattr__(b.dense.spec, "activation", "identity")

    res = ad.grad_check_params(lambda: T.elbo_loss(net, ds.x, ds.y, 100, noise, 0.7)[0],
                               net.parameters())
    assert res.nan_count == 0
    assert res.error < 1e-4


def test_elbo_step_gradients_match_tape():
    ds = small_data(10)
    spec = L.mlp_spec(2, [4], 1, weight_mode="gaussian", size=L.SizePriorSpec(2, 1, 3.0))
    net = net_from(spec)
    noise = net.sample_noise(np.random.default_rng(3))
    terms, grads = T.elbo_step(net, (ds.x, ds.y), 50, noise=noise)
    with ad.Tape():
        total = T.elbo_loss(net, ds.x, ds.y, 50, noise)[0]
        ref = ad.backward(total)
    assert terms.total == pytest.approx(total.item())
    for p in net.parameters():
        np.testing.assert_allclose(grads[p], ref[p])


def test_frozen_noise_gives_identical_losses():
    ds = small_data(10)
    spec = L.mlp_spec(2, [4], 1, weight_mode="gaussian", size=L.SizePriorSpec(2, 1, 3.0))
    net = net_from(spec)
    noise = net.sample_noise(np.random.default_rng(4))
    a, _ = T.elbo_step(net, (ds.x, ds.y), 50, noise=noise)
    b, _ = T.elbo_step(net, (ds.x, ds.y), 50, noise=noise)
    assert a == b


def test_weight_kl_agrees_with_monte_carlo():
    net = net_from(L.mlp_spec(2, [5], 1, weight_mode="gaussian", init_sigma=0.3), 5)
    exact = net.kl_weights().item()
    rng = np.random.default_rng(6)
    total = 0.0
    n = 10_000
    for d in (b.dense for b in net.blocks):
        for q in (d.qW, d.qb):
            m, s = q.mean.data.ravel(), q.sigma.ravel()
            w = m + s * rng.standard_normal((n, m.size))
            lq = -0.5 * ((w - m) / s) ** 2 - np.log(s)
            lp = -0.5 * w**2 - np.log(d.prior.sigma0)
            total += np.mean(np.sum(lq - lp, axis=1))
    assert abs(total - exact) / exact < 0.02


def test_non_finite_loss_names_term_and_position():
    ds = small_data(32)
    ds.y = ds.y.copy()
    ds.y[20] = np.inf
    net = net_from(L.mlp_spec(2, [4], 1))
    with pytest.raises(T.TrainingDiverged) as err:
        T.fit(net, ds, T.TrainConfig(epochs=2, batch_size=8, seed=0))
    assert err.value.term == "nll"
    assert err.value.epoch == 1
    assert err.value.step is not None


def test_empty_batch_rejected():
    net = net_from(L.mlp_spec(2, [4], 1))
    with pytest.raises(ValueError):
        T.elbo_step(net, (np.zeros((0, 2)), np.zeros(0)), 10)


# --------------------------------------------------------------------------
# fit


def test_zero_epochs_leaves_network_unchanged():
    net = net_from(L.mlp_spec(2, [4], 1))
    before = [p.data.copy() for p in net.parameters()]
    log = T.fit(net, small_data(), T.TrainConfig(epochs=0, batch_size=8))
    assert len(log) == 0
    for p, b in zip(net.parameters(), before):
        np.testing.assert_array_equal(p.data, b)


def test_same_seed_same_runlog():
    spec = L.mlp_spec(2, [6], 1, weight_mode="gaussian", size=L.SizePriorSpec(3, 2, 3.0))
    logs = []
    for _ in range(2):
        logs.append(T.fit(net_from(spec, 7), small_data(), T.TrainConfig(epochs=3, batch_size=16, seed=9)).to_jsonl())
    assert logs[0] == logs[1]


def test_runlog_rows_carry_architecture_state():
    spec = L.mlp_spec(2, [4, 4], 1, size=L.SizePriorSpec(3, 2, 3.0), skip=L.SkipPriorSpec(0.1, 1.0))
    log = T.fit(net_from(spec), small_data(), T.TrainConfig(epochs=2, batch_size=16))
    row = log.rows[-1]
    assert {"run_id", "epoch", "nll", "kl_weights", "kl_arch", "sizes", "skip_pi"} <= set(row)
    assert len(row["sizes"]) == 2 and len(row["sizes"][0]["pi"]) == 4
    assert len(row["skip_pi"]) == 1


def test_temperature_overrides_apply():
    spec = L.mlp_spec(2, [4, 4], 1, size=L.SizePriorSpec(3, 2, 3.0), skip=L.SkipPriorSpec(0.1, 1.0))
    net = net_from(spec)
    T.fit(net, small_data(), T.TrainConfig(epochs=0, batch_size=8, tau_size=2.0, tau_depth=0.5))
    assert all(a.temperature == 2.0 for a in net.size_adapters)
    assert all(a.temperature == 0.5 for a in net.skip_adapters)


class NumpyMLP:
    """Independent one-hidden-layer ReLU regression with hand-written backprop and Adam."""

    def __init__(self, W1, b1, W2, b2, lr):
        self.p = [W1.copy(), b1.copy(), W2.copy(), b2.copy()]
        self.m = [np.zeros_like(a) for a in self.p]
        self.v = [np.zeros_like(a) for a in self.p]
        self.lr, self.t = lr, 0

    def step(self, x, y, scale):
        W1, b1, W2, b2 = self.p
        z = x @ W1 + b1
        h = np.maximum(z, 0)
        out = (h @ W2 + b2)[:, 0]
        r = out - y
        loss = scale * (0.5 * np.sum(r**2) + 0.5 * r.size * math.log(2 * math.pi))
        g_out = scale * r[:, None]
        gW2 = h.T @ g_out
        gb2 = g_out.sum(axis=0)
        gh = g_out @ W2.T * (z > 0)
        grads = [x.T @ gh, gh.sum(axis=0), gW2, gb2]
        self.t += 1
        for i, g in enumerate(grads):
            self.m[i] = 0.9 * self.m[i] + 0.1 * g
            self.v[i] = 0.999 * self.v[i] + 0.001 * g * g
            mh = self.m[i] / (1 - 0.9**self.t)
            vh = self.v[i] / (1 - 0.999**self.t)
            self.p[i] = self.p[i] - self.lr * mh / (np.sqrt(vh) + 1e-8)
        return loss


def test_point_fit_matches_plain_regression():
    ds = small_data(48)
    net = net_from(L.mlp_spec(2, [6], 1), 3)
    d0, d1 = net.blocks[0].dense, net.blocks[1].dense
    ref = NumpyMLP(d0.W.data, d0.b.data, d1.W.data, d1.b.data, 0.01)
    cfg = T.TrainConfig(epochs=5, batch_size=16, learning_rate=0.01, seed=4, kl_scale=0.0)
    log = T.fit(net, ds, cfg)
    rng = np.random.default_rng(4)
    for epoch in range(5):
        order = rng.permutation(len(ds))
        losses = []
        for s in range(0, len(ds), 16):
            idx = order[s:s + 16]
            losses.append(ref.step(ds.x[idx], ds.y[idx], len(ds) / len(idx)))
        assert log.rows[epoch]["total"] == pytest.approx(np.mean(losses), abs=5e-4)


def test_early_stopping_restores_best_epoch():
    ds = small_data(64)
    val = small_data(32, seed=1)
    net = net_from(L.mlp_spec(2, [8], 1, weight_mode="gaussian"))
    log = T.fit(net, ds, T.TrainConfig(epochs=30, batch_size=8, learning_rate=0.05, early_stop_patience=3),
                validation=val)
    best = log.meta["best_epoch"]
    assert len(log) <= 30
    assert min(log.column("val_nll")) == pytest.approx(log.rows[best - 1]["val_nll"])


def test_toy_training_trends():
    # smoothed ELBO decreases and the MC-averaged fit improves over training
    ds = toy_periodic(400, 0.1, seed=0)
    spec = L.mlp_spec(1, [20], 1, weight_mode="gaussian", likelihood=L.Likelihood("gaussian", 0.1))
    net = net_from(spec)
    ll = []

    def cb(epoch, network, row):
        if epoch % 20 == 0:
            ll.append(test_loglik(predict(network, ds.x, 10, np.random.default_rng(0)), ds.y, 0.1))

    log = T.fit(net, ds, T.TrainConfig(epochs=100, batch_size=32, learning_rate=0.01), callback=cb)
    total = np.array(log.column("total"))
    smooth = np.convolve(total, np.ones(20) / 20, mode="valid")
    assert smooth[-1] < smooth[0]
    assert np.all(np.diff(smooth[::20]) <= 0)
    assert ll[-1] > ll[0]

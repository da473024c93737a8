"""Monte-Carlo posterior predictive and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import Likelihood, Network

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PredictiveResult:
    mean: np.ndarray
    samples: list[np.ndarray]
    n_samples: int

    @property
    def stacked(self) -> np.ndarray:
        return np.stack(self.samples)


def predict(network: Network, x, n_samples: int, rng: np.random.Generator) -> PredictiveResult:
    """Average of ``n_samples`` forward passes, each with fresh weight and architecture noise."""
    if n_samples < 1:
        raise ValueError("predict needs n_samples >= 1")
    x = np.asarray(x, dtype=np.float64)
    samples = [network.output(x, network.sample_noise(rng)) for _ in range(n_samples)]
    return PredictiveResult(np.mean(samples, axis=0), samples, n_samples)


def rmse(pred_mean, target) -> float:
    p = np.asarray(pred_mean, dtype=np.float64).reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if p.size != t.size:
        raise ValueError(f"rmse: {p.size} predictions for {t.size} targets")
    if t.size == 0:
        raise ValueError("rmse: empty test set")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def _logmeanexp(a: np.ndarray, axis: int = 0) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.mean(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def per_sample_logliks(result: PredictiveResult, target, likelihood: Likelihood | float) -> np.ndarray:
    """(n_samples, n_points) log p(y_i | sample) for every MC sample."""
    if not isinstance(likelihood, Likelihood):
        likelihood = Likelihood("gaussian", float(likelihood))
    s = result.stacked
    if likelihood.kind == "gaussian":
        t = np.asarray(target, dtype=np.float64).reshape(-1)
        s = s.reshape(s.shape[0], -1)
        if s.shape[1] != t.size:
            raise ValueError("test_loglik: predictions and targets differ in length")
        sig = likelihood.obs_sigma
        return -0.5 * (LOG_2PI + 2.0 * math.log(sig)) - 0.5 * ((s - t) / sig) ** 2
    labels = np.asarray(target, dtype=np.int64).reshape(-1)
    probs = s[:, np.arange(labels.size), labels]
    return np.log(np.maximum(probs, np.finfo(np.float64).tiny))


def test_loglik(result: PredictiveResult, target, likelihood: Likelihood | float) -> float:
    """Mean over points of log (1/S) sum_s p(y_i | sample s).

    ``likelihood`` is a :class:`Likelihood` or a Gaussian observation sigma.
    """
    ll = per_sample_logliks(result, target, likelihood)
    if ll.shape[1] == 0:
        raise ValueError("test_loglik: empty test set")
    return float(np.mean(_logmeanexp(ll, axis=0)))


test_loglik.__test__ = False  # not a pytest test despite the name

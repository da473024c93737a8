"""Reparameterised samplers and log-densities.

Covers the factorised Gaussian weight posterior, the concrete (Gumbel-softmax)
categorical and binary concrete distributions, the discretised Gaussian that
couples the size probabilities into a unimodal vector, and a Monte-Carlo KL
estimator.

Concrete samples are carried around in log space (``log s`` computed as a
log-softmax or log-sigmoid of the perturbed logits).  Densities evaluated on
those are exact even when some coordinates of ``s`` underflow to zero in
linear space.  The public ``log_density_*`` functions that take ``s`` itself
clamp it to ``[1e-6, 1 - 1e-6]`` first.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from math import lgamma, log

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

S_MIN = 1e-6
SIMPLEX_TOL = 1e-6
PROB_FLOOR = 1e-6


def softplus_inverse(y: float | np.ndarray) -> float | np.ndarray:
    """rho such that softplus(rho) == y."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("softplus_inverse needs positive values")
    out = y + np.log(-np.expm1(-y))
    return float(out) if out.ndim == 0 else out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# parameter containers


@dataclass
class GaussianPosterior:
    """Mean-field Gaussian over a weight tensor; std is softplus(rho)."""

    mean: Tensor
    rho: Tensor

    def __post_init__(self):
        if self.mean.shape != self.rho.shape:
            raise ad.ShapeError(
                f"GaussianPosterior: mean {self.mean.shape} vs rho {self.rho.shape}")

    @property
    def sigma(self) -> np.ndarray:
        return np.logaddexp(0.0, self.rho.data)


@dataclass(frozen=True)
class GaussianPrior:
    sigma0: float

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError(f"GaussianPrior: sigma0 must be positive, got {self.sigma0}")


@dataclass
class ConcreteCategoricalParams:
    """Concrete categorical distribution, stored through its log-probabilities."""

    log_probs: Tensor
    temperature: float

    def __post_init__(self):
        self.log_probs = _as_tensor(self.log_probs)
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        lp = self.log_probs.data
        if not np.isfinite(lp).all():
            raise ValueError("concrete categorical: every probability must be > 0")
        if abs(np.exp(lp).sum() - 1.0) > 1e-9:
            raise ValueError("concrete categorical: probabilities do not sum to 1")

    @classmethod
    def from_probs(cls, probs, temperature: float) -> ConcreteCategoricalParams:
        p = np.asarray(probs.data if isinstance(probs, Tensor) else probs, dtype=np.float64)
        if np.any(p <= 0):
            raise ValueError("concrete categorical: every probability must be > 0")
        if abs(p.sum() - 1.0) > 1e-12 * max(1, p.size):
            raise ValueError(f"concrete categorical: probabilities sum to {p.sum()!r}")
        if isinstance(probs, Tensor):
            return cls(ad.log(probs), temperature)
        return cls(Tensor(np.log(p)), temperature)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)

    @property
    def K(self) -> int:
        return self.log_probs.shape[-1]


@dataclass
class ConcreteBernoulliParams:
    """Binary concrete distribution parameterised by the logit of its probability."""

    logit: Tensor
    temperature: float

    def __post_init__(self):
        self.logit = _as_tensor(self.logit)
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @classmethod
    def from_prob(cls, prob: float, temperature: float) -> ConcreteBernoulliParams:
        if not 0.0 < prob < 1.0:
            raise ValueError(f"concrete Bernoulli: probability must be in (0, 1), got {prob}")
        return cls(Tensor(log(prob) - log(1.0 - prob)), temperature)

    @property
    def prob(self) -> float:
        return float(ad._expit(self.logit.data))


@dataclass
class TruncNormSizeParams:
    """Location/scale of the discretised Gaussian over sizes 1..K.

    ``mu`` and ``sigma_raw`` may be trainable tensors or plain floats;
    the scale is softplus(sigma_raw).
    """

    mu: Tensor
    sigma_raw: Tensor
    K: int

    def __post_init__(self):
        self.mu = _as_tensor(self.mu)
        self.sigma_raw = _as_tensor(self.sigma_raw)
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")

    @classmethod
    def from_sigma(cls, mu: float, sigma: float, K: int) -> TruncNormSizeParams:
        return cls(Tensor(mu), Tensor(softplus_inverse(sigma)), K)

    @property
    def sigma(self) -> float:
        return float(np.logaddexp(0.0, self.sigma_raw.data))


# --------------------------------------------------------------------------
# noise


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def logistic_noise(rng: np.random.Generator, shape=()) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return np.log(u) - np.log1p(-u)


# --------------------------------------------------------------------------
# Gaussian weights


def sample_gaussian(post: GaussianPosterior, noise) -> Tensor:
    """Reparameterised draw mean + softplus(rho) * noise."""
    return ad.gaussian_sample(post.mean, post.rho, np.asarray(noise, dtype=np.float64))


def kl_gaussian_analytic(post: GaussianPosterior, prior: GaussianPrior) -> Tensor:
    """Closed-form KL(q || p) summed over all weights of ``post``."""
    return ad.gaussian_kl(post.mean, post.rho, prior.sigma0)


# --------------------------------------------------------------------------
# concrete categorical


def concrete_categorical_log_sample(params: ConcreteCategoricalParams, gumbel) -> Tensor:
    """log of a concrete categorical sample: log_softmax((log pi + g) / tau)."""
    g = np.asarray(gumbel, dtype=np.float64)
    if g.shape[-1:] != params.log_probs.shape[-1:]:
        raise ad.ShapeError(
            f"concrete sample: noise {g.shape} vs log-probs {params.log_probs.shape}")
    return ad.log_softmax(ad.add(g, params.log_probs), params.temperature)


def sample_concrete_categorical(params: ConcreteCategoricalParams, gumbel) -> Tensor:
    """Point on the simplex, softmax((log pi + g) / tau)."""
    g = np.asarray(gumbel, dtype=np.float64)
    if g.shape[-1:] != params.log_probs.shape[-1:]:
        raise ad.ShapeError(
            f"concrete sample: noise {g.shape} vs log-probs {params.log_probs.shape}")
    return ad.softmax(ad.add(g, params.log_probs), params.temperature)


def concrete_categorical_log_density(log_s: Tensor, params: ConcreteCategoricalParams) -> Tensor:
    """Log-density of the concrete categorical at a point given by ``log s``.

    Batched over leading dimensions of ``log_s``.
    """
    K = params.K
    tau = params.temperature
    lp = params.log_probs
    const = lgamma(K) + (K - 1) * log(tau)
    body = ad.sum(ad.sub(lp, ad.mul(log_s, tau + 1.0)), axis=-1)
    norm = ad.logsumexp(ad.sub(lp, ad.mul(log_s, tau)))
    return ad.add(ad.sub(body, ad.mul(norm, float(K))), const)


def log_density_concrete_categorical(s, params: ConcreteCategoricalParams) -> Tensor:
    s = _as_tensor(s)
    total = s.data.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > SIMPLEX_TOL) or np.any(s.data < -SIMPLEX_TOL):
        raise ValueError("concrete categorical density: point is off the simplex")
    log_s = ad.log(ad.clip(s, S_MIN, 1.0 - S_MIN))
    return concrete_categorical_log_density(log_s, params)


# --------------------------------------------------------------------------
# binary concrete


def concrete_bernoulli_log_sample(params: ConcreteBernoulliParams, noise) -> tuple[Tensor, Tensor]:
    """(log s, log(1 - s)) for s = sigmoid((logit + noise) / tau)."""
    u = ad.div(ad.add(params.logit, np.asarray(noise, dtype=np.float64)), params.temperature)
    return ad.log_sigmoid(u), ad.log_sigmoid(ad.neg(u))


def sample_concrete_bernoulli(params: ConcreteBernoulliParams, noise) -> Tensor:
    u = ad.div(ad.add(params.logit, np.asarray(noise, dtype=np.float64)), params.temperature)
    return ad.sigmoid(u)


def concrete_bernoulli_log_density(log_s: Tensor, log_1ms: Tensor,
                                   params: ConcreteBernoulliParams) -> Tensor:
    """Binary concrete log-density at s, given log s and log(1 - s).

    Uses the probability/complement pair (pi, 1 - pi), which is the density
    of ``sigmoid((logit(pi) + L) / tau)`` with logistic L and the K = 2 case
    of the concrete categorical.
    """
    tau = params.temperature
    log_pi = ad.log_sigmoid(params.logit)
    log_1mpi = ad.log_sigmoid(ad.neg(params.logit))
    head = ad.add(ad.add(log_pi, log_1mpi), log(tau))
    body = ad.mul(ad.add(log_s, log_1ms), tau + 1.0)
    norm = ad.logaddexp(ad.sub(log_pi, ad.mul(log_s, tau)),
                        ad.sub(log_1mpi, ad.mul(log_1ms, tau)))
    return ad.sub(ad.sub(head, body), ad.mul(norm, 2.0))


def log_density_concrete_bernoulli(s, params: ConcreteBernoulliParams) -> Tensor:
    s = _as_tensor(s)
    if np.any((s.data < 0.0) | (s.data > 1.0)):
        raise ValueError("concrete Bernoulli density: point outside the unit interval")
    sc = ad.clip(s, S_MIN, 1.0 - S_MIN)
    return concrete_bernoulli_log_density(ad.log(sc), ad.log(ad.sub(1.0, sc)), params)


# --------------------------------------------------------------------------
# size probabilities


def size_log_probs(params: TruncNormSizeParams, floor: float = PROB_FLOOR) -> Tensor:
    """log pi_i with pi_i proportional to exp(-(i - mu)^2 / (2 sigma^2)), i = 1..K.

    The normaliser of the [1, K] truncation is shared by every grid point
    and cancels in the renormalisation.  Probabilities are then lifted off
    zero as ``(pi + floor) / (1 + K * floor)``: without a floor the far tail
    of a concentrated posterior carries log-probabilities of order
    ``-K^2 / sigma^2`` and the concrete KL grows without bound as sigma
    shrinks.  ``floor=0`` gives the plain grid.
    """
    if floor < 0:
        raise ValueError("floor must be >= 0")
    grid = np.arange(1, params.K + 1, dtype=np.float64)
    sigma = ad.softplus(params.sigma_raw)
    z = ad.div(ad.square(ad.sub(grid, params.mu)), ad.mul(ad.square(sigma), -2.0))
    lp = ad.log_softmax(z)
    if floor == 0:
        return lp
    return ad.sub(ad.logaddexp(lp, np.full(params.K, np.log(floor))), np.log1p(params.K * floor))


def size_probs(params: TruncNormSizeParams, floor: float = PROB_FLOOR) -> Tensor:
    return ad.exp(size_log_probs(params, floor))


# --------------------------------------------------------------------------
# Monte-Carlo KL


def mc_kl(q_logdensity: Callable, p_logdensity: Callable, sampler: Callable,
          n_samples: int) -> Tensor:
    """Average of log q(s) - log p(s) over ``n_samples`` draws of ``sampler``.

    ``sampler(n)`` returns a batch of ``n`` reparameterised samples (any
    object the two log-density callables accept); the log-densities return
    one value per sample.
    """
    if n_samples < 1:
        raise ValueError("mc_kl needs at least one sample")
    draws = sampler(n_samples)
    lq = q_logdensity(draws)
    lp = p_logdensity(draws)
    for name, v in (("q", lq), ("p", lp)):
        bad = np.flatnonzero(~np.isfinite(np.atleast_1d(v.data)))
        if bad.size:
            raise FloatingPointError(
                f"mc_kl: log {name} density non-finite at sample index {int(bad[0])}")
    return ad.mean(ad.sub(lq, lp))

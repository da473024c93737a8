"""Dense layers with learnable width and depth.

A layer's width is controlled by a :class:`SizeAdapter`: a concrete
categorical sample ``s`` over sizes ``1..K`` is turned into the mask
``m_i = sum_{j >= i} s_j`` which gates the layer's outputs, so the first
units stay open and the tail is switched off.  Depth is controlled by a
:class:`SkipAdapter`: a binary concrete gate ``g`` mixes the layer's output
with its input, ``(1 - g) * out + g * x``.

Weights are either point estimates or mean-field Gaussians.  Weight matrices
are stored as ``(in_dim, out_dim)``; a layer's units are its columns.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from math import sqrt

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter
from .distributions import (
    PROB_FLOOR,
    ConcreteBernoulliParams,
    ConcreteCategoricalParams,
    GaussianPosterior,
    GaussianPrior,
    TruncNormSizeParams,
    concrete_bernoulli_log_density,
    concrete_bernoulli_log_sample,
    concrete_categorical_log_density,
    concrete_categorical_log_sample,
    gumbel_noise,
    kl_gaussian_analytic,
    logistic_noise,
    sample_gaussian,
    size_log_probs,
    softplus_inverse,
)

ACTIVATIONS = ("relu", "identity", "softmax")
WEIGHT_MODES = ("point", "gaussian")


# --------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class DenseSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"
    weight_mode: str = "point"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"DenseSpec: dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"DenseSpec: unknown activation {self.activation!r}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"DenseSpec: unknown weight mode {self.weight_mode!r}")


@dataclass(frozen=True)
class SizePriorSpec:
    prior_mu: float
    prior_sigma: float
    temperature: float
    init_mu: float | None = None
    init_sigma: float | None = None
    prob_floor: float = PROB_FLOOR


@dataclass(frozen=True)
class SkipPriorSpec:
    prior_prob: float
    temperature: float
    init_prob: float | None = None


@dataclass(frozen=True)
class LayerSpec:
    dense: DenseSpec
    size: SizePriorSpec | None = None
    skip: SkipPriorSpec | None = None


@dataclass(frozen=True)
class Likelihood:
    """Observation model: ``gaussian`` with fixed noise or ``categorical``."""

    kind: str = "gaussian"
    obs_sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "categorical"):
            raise ValueError(f"unknown likelihood {self.kind!r}")
        if self.kind == "gaussian" and not self.obs_sigma > 0:
            raise ValueError("gaussian likelihood needs obs_sigma > 0")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    likelihood: Likelihood = field(default_factory=Likelihood)
    weight_prior_sigma: float = 1.0
    init_sigma: float = 0.05
    init: str = "fan_in"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("NetworkSpec needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.dense.out_dim != b.dense.in_dim:
                raise ValueError(
                    f"NetworkSpec: layer widths do not chain ({a.dense.out_dim} -> {b.dense.in_dim})")
        last = self.layers[-1]
        if last.size is not None or last.skip is not None:
            raise ValueError("NetworkSpec: the output layer cannot carry size or skip adapters")
        for i, layer in enumerate(self.layers):
            if layer.skip is not None and layer.dense.in_dim != layer.dense.out_dim:
                raise ValueError(
                    f"NetworkSpec: layer {i} changes dimension and cannot be skipped")
        if self.init not in ("fan_in", "prior"):
            raise ValueError(f"NetworkSpec: unknown init {self.init!r}")


def mlp_spec(in_dim: int, hidden: list[int], out_dim: int, *, weight_mode: str = "point",
             size: SizePriorSpec | None = None, skip: SkipPriorSpec | None = None,
             output_activation: str = "identity", **kwargs) -> NetworkSpec:
    """ReLU MLP; ``size``/``skip`` are attached to every hidden layer they fit."""
    dims = [in_dim, *hidden]
    layers = []
    for a, b in zip(dims, dims[1:]):
        layers.append(LayerSpec(
            DenseSpec(a, b, "relu", weight_mode),
            size=size,
            skip=skip if (skip is not None and a == b) else None,
        ))
    layers.append(LayerSpec(DenseSpec(dims[-1], out_dim, output_activation, weight_mode)))
    return NetworkSpec(tuple(layers), **kwargs)


# --------------------------------------------------------------------------
# dense layer


class Dense:
    """Fully connected layer with point or Gaussian weights."""

    def __init__(self, spec: DenseSpec, rng: np.random.Generator | None = None, *,
                 prior_sigma: float = 1.0, init_sigma: float = 0.05, init: str = "fan_in"):
        self.spec = spec
        self.prior = GaussianPrior(prior_sigma)
        rng = rng if rng is not None else np.random.default_rng(0)
        n_in, n_out = spec.in_dim, spec.out_dim
        gain = 6.0 if spec.activation == "relu" else 3.0
        if init == "prior" and spec.weight_mode == "point":
            # a point estimate cannot start at the prior itself; take a draw from it
            w0 = rng.normal(0.0, prior_sigma, (n_in, n_out))
            b0 = rng.normal(0.0, prior_sigma, n_out)
        elif init == "prior":
            w0 = np.zeros((n_in, n_out))
            b0 = np.zeros(n_out)
            init_sigma = prior_sigma
        else:
            w0 = rng.uniform(-sqrt(gain / n_in), sqrt(gain / n_in), (n_in, n_out))
            b0 = rng.uniform(-1.0 / sqrt(n_in), 1.0 / sqrt(n_in), n_out)
        if spec.weight_mode == "point":
            self.W = parameter(w0, "W")
            self.b = parameter(b0, "b")
            self.qW = self.qb = None
        else:
            r0 = softplus_inverse(init_sigma)
            self.qW = GaussianPosterior(parameter(w0, "W_mean"), parameter(np.full_like(w0, r0), "W_rho"))
            self.qb = GaussianPosterior(parameter(b0, "b_mean"), parameter(np.full_like(b0, r0), "b_rho"))
            self.W = self.qW.mean
            self.b = self.qb.mean

    @property
    def bayesian(self) -> bool:
        return self.qW is not None

    def parameters(self) -> list[Tensor]:
        if self.bayesian:
            return [self.qW.mean, self.qW.rho, self.qb.mean, self.qb.rho]
        return [self.W, self.b]

    def sample_noise(self, rng: np.random.Generator):
        if not self.bayesian:
            return None, None
        return (rng.standard_normal(self.W.shape), rng.standard_normal(self.b.shape))

    def weights(self, eps_w=None, eps_b=None) -> tuple[Tensor, Tensor]:
        """Sampled weights for the given noise; posterior means when noise is None."""
        if not self.bayesian or eps_w is None:
            return self.W, self.b
        return sample_gaussian(self.qW, eps_w), sample_gaussian(self.qb, eps_b)

    def kl(self) -> Tensor | None:
        if not self.bayesian:
            return None
        return ad.add(kl_gaussian_analytic(self.qW, self.prior), kl_gaussian_analytic(self.qb, self.prior))

    def preactivation(self, x, W: Tensor, b: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, W), b)

    def forward(self, x, weights: tuple[Tensor, Tensor] | None = None) -> Tensor:
        W, b = weights if weights is not None else (self.W, self.b)
        return activate(self.preactivation(x, W, b), self.spec.activation)

    def n_params(self) -> int:
        return self.W.size + self.b.size


def activate(z: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return ad.relu(z)
    if activation == "softmax":
        return ad.softmax(z)
    return z


# --------------------------------------------------------------------------
# size adapter


@dataclass
class SizeSample:
    log_s: Tensor
    s: Tensor
    mask: Tensor
    q: ConcreteCategoricalParams


def build_size_mask(s) -> Tensor:
    """m_i = sum_{j >= i} s_j, the product of an upper-triangular ones matrix with s."""
    return ad.reverse_cumsum(s)


class SizeAdapter:
    """Learnable width of a layer with at most ``K`` units."""

    def __init__(self, K: int, prior_mu: float, prior_sigma: float, temperature: float,
                 init_mu: float | None = None, init_sigma: float | None = None,
                 prob_floor: float = PROB_FLOOR):
        if K < 1:
            raise ValueError(f"SizeAdapter: K must be >= 1, got {K}")
        if not temperature > 0:
            raise ValueError("SizeAdapter: temperature must be positive")
        self.K = K
        self.temperature = float(temperature)
        self.prob_floor = float(prob_floor)
        self.prior = TruncNormSizeParams.from_sigma(prior_mu, prior_sigma, K)
        self.prior_mu = float(prior_mu)
        self.prior_sigma = float(prior_sigma)
        mu0 = prior_mu if init_mu is None else init_mu
        sigma0 = prior_sigma if init_sigma is None else init_sigma
        self.post = TruncNormSizeParams(parameter(mu0, "size_mu"),
                                        parameter(softplus_inverse(sigma0), "size_sigma_raw"), K)
        self._prior_q = ConcreteCategoricalParams(
            Tensor(size_log_probs(self.prior, self.prob_floor).data), self.temperature)

    def parameters(self) -> list[Tensor]:
        return [self.post.mu, self.post.sigma_raw]

    def set_temperature(self, temperature: float) -> None:
        if not temperature > 0:
            raise ValueError("SizeAdapter: temperature must be positive")
        self.temperature = float(temperature)
        self._prior_q = ConcreteCategoricalParams(self._prior_q.log_probs, self.temperature)

    @property
    def mu(self) -> float:
        return float(self.post.mu.data)

    @property
    def sigma(self) -> float:
        return self.post.sigma

    def log_probs(self) -> Tensor:
        return size_log_probs(self.post, self.prob_floor)

    def probs(self) -> np.ndarray:
        with ad.no_tape():
            return np.exp(self.log_probs().data)

    def prior_probs(self) -> np.ndarray:
        return np.exp(self._prior_q.log_probs.data)

    def sample_noise(self, rng: np.random.Generator) -> np.ndarray:
        return gumbel_noise(rng, self.K)

    def sample(self, gumbel) -> SizeSample:
        q = ConcreteCategoricalParams(self.log_probs(), self.temperature)
        log_s = concrete_categorical_log_sample(q, gumbel)
        s = ad.exp(log_s)
        return SizeSample(log_s, s, build_size_mask(s), q)

    def kl(self, sample: SizeSample) -> Tensor:
        """Single-sample estimate of KL(q(s) || p(s)) at the forward pass's sample."""
        return ad.sub(concrete_categorical_log_density(sample.log_s, sample.q),
                      concrete_categorical_log_density(sample.log_s, self._prior_q))

    def decode(self) -> int:
        return decode_size(self)

    def hard_mask(self) -> np.ndarray:
        k = self.decode()
        m = np.zeros(self.K)
        m[:k] = 1.0
        return m


def decode_size(adapter: SizeAdapter) -> int:
    """Most probable size under the posterior (ties go to the smaller size)."""
    return int(np.argmax(adapter.probs())) + 1


# --------------------------------------------------------------------------
# skip adapter


@dataclass
class SkipSample:
    log_g: Tensor
    log_1mg: Tensor
    gamma: Tensor


class SkipAdapter:
    """Learnable bypass gate of a dimension-preserving layer."""

    def __init__(self, prior_prob: float, temperature: float, init_prob: float | None = None):
        self.temperature = float(temperature)
        self.prior = ConcreteBernoulliParams.from_prob(prior_prob, temperature)
        self.prior_prob = float(prior_prob)
        p0 = prior_prob if init_prob is None else init_prob
        start = ConcreteBernoulliParams.from_prob(p0, temperature)
        self.logit = parameter(start.logit.data, "skip_logit")
        self.q = ConcreteBernoulliParams(self.logit, self.temperature)

    def parameters(self) -> list[Tensor]:
        return [self.logit]

    def set_temperature(self, temperature: float) -> None:
        self.temperature = float(temperature)
        self.prior = ConcreteBernoulliParams(self.prior.logit, self.temperature)
        self.q = ConcreteBernoulliParams(self.logit, self.temperature)

    @property
    def prob(self) -> float:
        return float(ad._expit(self.logit.data))

    @property
    def dropped(self) -> bool:
        return self.prob > 0.5

    def sample_noise(self, rng: np.random.Generator) -> float:
        return float(logistic_noise(rng))

    def sample(self, noise) -> SkipSample:
        log_g, log_1mg = concrete_bernoulli_log_sample(self.q, noise)
        return SkipSample(log_g, log_1mg, ad.exp(log_g))

    def kl(self, sample: SkipSample) -> Tensor:
        return ad.sub(concrete_bernoulli_log_density(sample.log_g, sample.log_1mg, self.q),
                      concrete_bernoulli_log_density(sample.log_g, sample.log_1mg, self.prior))


# --------------------------------------------------------------------------
# gated forward rules


def sized_forward(x, layer: Dense, adapter: SizeAdapter, rng: np.random.Generator | None = None,
                  *, weights: tuple[Tensor, Tensor] | None = None, gumbel=None,
                  mask=None) -> Tensor:
    """f(x W + b) gated by the size mask.

    The mask comes from ``mask`` if given, else from a concrete sample driven
    by ``gumbel`` (drawn from ``rng`` when omitted).
    """
    if adapter.K != layer.spec.out_dim:
        raise ad.ShapeError(f"size adapter K={adapter.K} vs layer width {layer.spec.out_dim}")
    if mask is None:
        if gumbel is None:
            gumbel = adapter.sample_noise(rng if rng is not None else np.random.default_rng())
        mask = adapter.sample(gumbel).mask
    return ad.mul(layer.forward(x, weights), mask)


def skip_forward(x, layer: Dense, adapter: SkipAdapter, rng: np.random.Generator | None = None,
                 *, weights: tuple[Tensor, Tensor] | None = None, noise=None, gamma=None,
                 inner: Tensor | None = None) -> Tensor:
    """(1 - g) * f(x W + b) + g * x for a sampled (or given) gate g.

    ``inner`` replaces f(x W + b), which is how a size mask composes with
    the skip.
    """
    if layer.spec.in_dim != layer.spec.out_dim:
        raise ad.ShapeError(
            f"skip_forward: layer maps {layer.spec.in_dim} -> {layer.spec.out_dim}")
    if gamma is None:
        if noise is None:
            noise = adapter.sample_noise(rng if rng is not None else np.random.default_rng())
        gamma = adapter.sample(noise).gamma
    out = inner if inner is not None else layer.forward(x, weights)
    return ad.add(ad.mul(ad.sub(1.0, gamma), out), ad.mul(gamma, x))


# --------------------------------------------------------------------------
# network


@dataclass
class BlockNoise:
    eps_w: np.ndarray | None = None
    eps_b: np.ndarray | None = None
    gumbel: np.ndarray | None = None
    logistic: float | None = None


class Block:
    def __init__(self, dense: Dense, size: SizeAdapter | None = None,
                 skip: SkipAdapter | None = None):
        if skip is not None and dense.spec.in_dim != dense.spec.out_dim:
            raise ValueError("a skip adapter needs a dimension-preserving layer")
        if size is not None and size.K != dense.spec.out_dim:
            raise ValueError("size adapter K must equal the layer width")
        self.dense, self.size, self.skip = dense, size, skip

    def parameters(self) -> list[Tensor]:
        ps = self.dense.parameters()
        if self.size is not None:
            ps += self.size.parameters()
        if self.skip is not None:
            ps += self.skip.parameters()
        return ps

    def sample_noise(self, rng: np.random.Generator) -> BlockNoise:
        eps_w, eps_b = self.dense.sample_noise(rng)
        return BlockNoise(
            eps_w, eps_b,
            self.size.sample_noise(rng) if self.size is not None else None,
            self.skip.sample_noise(rng) if self.skip is not None else None,
        )

    def run(self, x, noise: BlockNoise | None) -> tuple[Tensor, Tensor | None]:
        dense = self.dense
        if noise is None:
            noise = BlockNoise()
        weights = dense.weights(noise.eps_w, noise.eps_b)
        kl = None
        if dense.spec.activation == "softmax":
            out = dense.preactivation(x, *weights)
        else:
            out = dense.forward(x, weights)
        if self.size is not None:
            if noise.gumbel is None:
                raise ValueError("size adapter needs Gumbel noise")
            ss = self.size.sample(noise.gumbel)
            out = ad.mul(out, ss.mask)
            kl = self.size.kl(ss)
        if self.skip is not None:
            if noise.logistic is None:
                raise ValueError("skip adapter needs logistic noise")
            sk = self.skip.sample(noise.logistic)
            out = skip_forward(x, dense, self.skip, gamma=sk.gamma, inner=out)
            k2 = self.skip.kl(sk)
            kl = k2 if kl is None else ad.add(kl, k2)
        return out, kl


class Network:
    """Stack of blocks plus an observation model."""

    def __init__(self, blocks: list[Block], likelihood: Likelihood | None = None):
        self.blocks = list(blocks)
        self.likelihood = likelihood or Likelihood()

    @classmethod
    def from_spec(cls, spec: NetworkSpec, rng: np.random.Generator | None = None) -> Network:
        rng = rng if rng is not None else np.random.default_rng(0)
        blocks = []
        for ls in spec.layers:
            dense = Dense(ls.dense, rng, prior_sigma=spec.weight_prior_sigma,
                          init_sigma=spec.init_sigma, init=spec.init)
            size = skip = None
            if ls.size is not None:
                p = ls.size
                size = SizeAdapter(ls.dense.out_dim, p.prior_mu, p.prior_sigma, p.temperature,
                                   p.init_mu, p.init_sigma, p.prob_floor)
            if ls.skip is not None:
                p = ls.skip
                skip = SkipAdapter(p.prior_prob, p.temperature, p.init_prob)
            blocks.append(Block(dense, size, skip))
        return cls(blocks, spec.likelihood)

    # -- introspection

    def parameters(self) -> list[Tensor]:
        return [p for b in self.blocks for p in b.parameters()]

    def weight_parameters(self) -> list[Tensor]:
        return [p for b in self.blocks for p in b.dense.parameters()]

    def arch_parameters(self) -> list[Tensor]:
        ps = []
        for b in self.blocks:
            if b.size is not None:
                ps += b.size.parameters()
            if b.skip is not None:
                ps += b.skip.parameters()
        return ps

    @property
    def size_adapters(self) -> list[SizeAdapter]:
        return [b.size for b in self.blocks if b.size is not None]

    @property
    def skip_adapters(self) -> list[SkipAdapter]:
        return [b.skip for b in self.blocks if b.skip is not None]

    @property
    def in_dim(self) -> int:
        return self.blocks[0].dense.spec.in_dim

    @property
    def out_dim(self) -> int:
        return self.blocks[-1].dense.spec.out_dim

    @property
    def is_stochastic(self) -> bool:
        return any(b.dense.bayesian or b.size or b.skip for b in self.blocks)

    def n_params(self) -> int:
        return int(sum(b.dense.n_params() for b in self.blocks))

    # -- forward

    def sample_noise(self, rng: np.random.Generator) -> list[BlockNoise]:
        return [b.sample_noise(rng) for b in self.blocks]

    def run(self, x, noise: list[BlockNoise] | None = None) -> tuple[Tensor, Tensor | None]:
        """Forward pass under ``noise``; returns (output, architecture KL estimate).

        A softmax output layer emits logits here; the categorical
        likelihood normalises them.
        """
        if noise is None:
            noise = [None] * len(self.blocks)
        h = x
        kl_total = None
        for block, bn in zip(self.blocks, noise):
            h, kl = block.run(h, bn)
            if kl is not None:
                kl_total = kl if kl_total is None else ad.add(kl_total, kl)
        return h, kl_total

    def kl_weights(self) -> Tensor | None:
        total = None
        for b in self.blocks:
            k = b.dense.kl()
            if k is not None:
                total = k if total is None else ad.add(total, k)
        return total

    def output(self, x, noise: list[BlockNoise] | None) -> np.ndarray:
        """Prediction as numpy (softmax applied for categorical outputs)."""
        with ad.no_tape():
            out, _ = self.run(np.asarray(x, dtype=np.float64), noise)
        if self.blocks[-1].dense.spec.activation == "softmax":
            return ad.softmax(out).data
        return out.data

    def forward_hard(self, x) -> np.ndarray:
        """Noise-free forward: weight means, decoded sizes as 0/1 masks, decoded skips."""
        h = np.asarray(x, dtype=np.float64)
        for b in self.blocks:
            d = b.dense
            z = h @ d.W.data + d.b.data
            act = d.spec.activation
            if act == "relu":
                out = np.maximum(z, 0.0)
            elif act == "softmax":
                e = np.exp(z - z.max(axis=-1, keepdims=True))
                out = e / e.sum(axis=-1, keepdims=True)
            else:
                out = z
            if b.size is not None:
                out = out * b.size.hard_mask()
            if b.skip is not None and b.skip.dropped:
                out = h
            h = out
        return h

    # -- architecture

    def describe(self) -> dict:
        """Serializable description of the architecture and its posteriors."""
        layers = []
        for b in self.blocks:
            s = b.dense.spec
            entry = {
                "in_dim": s.in_dim,
                "out_dim": s.out_dim,
                "activation": s.activation,
                "weight_mode": s.weight_mode,
                "size_posterior": None,
                "skip_posterior": None,
            }
            if b.size is not None:
                entry["size_posterior"] = {
                    "mu": b.size.mu, "sigma": b.size.sigma, "K": b.size.K,
                    "decoded": b.size.decode(), "temperature": b.size.temperature,
                    "prior_mu": b.size.prior_mu, "prior_sigma": b.size.prior_sigma,
                }
            if b.skip is not None:
                entry["skip_posterior"] = {
                    "pi": b.skip.prob, "temperature": b.skip.temperature,
                    "prior_pi": b.skip.prior_prob,
                }
            layers.append(entry)
        return {"layers": layers, "likelihood": asdict(self.likelihood)}

    def to_json(self) -> str:
        return json.dumps(self.describe(), indent=2, sort_keys=True)


def decode_depth(network: Network) -> list[int]:
    """Indices of blocks kept after removing those whose skip probability exceeds 0.5."""
    return [i for i, b in enumerate(network.blocks) if b.skip is None or not b.skip.dropped]


def decoded_sizes(network: Network) -> list[int]:
    """Width of every kept hidden layer after decoding."""
    kept = decode_depth(network)
    out = []
    for i in kept[:-1]:
        b = network.blocks[i]
        out.append(b.size.decode() if b.size is not None else b.dense.spec.out_dim)
    return out


def prune(network: Network) -> Network:
    """Rigid network equal to the decoded architecture.

    Skipped blocks are removed; a sized block keeps its first ``k`` units and
    the next kept block keeps the matching input rows of its weight matrix.
    Weight posteriors (or point weights) are copied for the kept entries.
    """
    keep_in = np.arange(network.in_dim)
    blocks = []
    for i, b in enumerate(network.blocks):
        if b.skip is not None and b.skip.dropped:
            continue
        d = b.dense
        k = b.size.decode() if b.size is not None else d.spec.out_dim
        spec = DenseSpec(len(keep_in), k, d.spec.activation, d.spec.weight_mode)
        nd = Dense(spec, prior_sigma=d.prior.sigma0)
        if d.bayesian:
            for src, dst in ((d.qW, nd.qW),):
                dst.mean.data = src.mean.data[np.ix_(keep_in, np.arange(k))].copy()
                dst.rho.data = src.rho.data[np.ix_(keep_in, np.arange(k))].copy()
            nd.qb.mean.data = d.qb.mean.data[:k].copy()
            nd.qb.rho.data = d.qb.rho.data[:k].copy()
        else:
            nd.W.data = d.W.data[np.ix_(keep_in, np.arange(k))].copy()
            nd.b.data = d.b.data[:k].copy()
        blocks.append(Block(nd))
        keep_in = np.arange(k)
    return Network(blocks, network.likelihood)

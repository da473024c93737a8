"""ELBO objective and the minibatch optimisation loop.

Per step, the loss is

    total = (N / B) * nll_batch + kl_scale * (kl_weights + kl_arch)

with one weight sample and one architecture sample shared by the whole
batch.  ``kl_weights`` is the closed-form Gaussian KL and ``kl_arch`` a
single-sample estimate of the concrete KLs taken at the same architecture
sample the forward pass used.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Gradients, Tensor
from .layers import BlockNoise, Network

LOG_2PI = math.log(2.0 * math.pi)


class TrainingDiverged(FloatingPointError):
    """A loss term or gradient became NaN/inf."""

    def __init__(self, term: str, epoch: int | None = None, step: int | None = None):
        self.term, self.epoch, self.step = term, epoch, step
        where = "" if epoch is None else f" at epoch {epoch}, step {step}"
        super().__init__(f"non-finite {term}{where}")


# --------------------------------------------------------------------------
# likelihoods


def gaussian_loglik(pred_mean: Tensor, target, obs_sigma: float) -> Tensor:
    """Sum of N(target; pred_mean, obs_sigma^2) log-densities."""
    if not obs_sigma > 0:
        raise ValueError("obs_sigma must be positive")
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    t = t.reshape(pred_mean.shape)
    resid = ad.sub(pred_mean, t)
    n = pred_mean.size
    const = -0.5 * n * (LOG_2PI + 2.0 * math.log(obs_sigma))
    return ad.add(ad.mul(ad.sum(ad.square(resid)), -0.5 / obs_sigma**2), const)


def categorical_loglik(logits: Tensor, labels) -> Tensor:
    """Sum of log softmax(logits)[label] over the batch."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    return ad.sum(ad.mul(ad.log_softmax(logits), onehot))


def loglik(network: Network, out: Tensor, target) -> Tensor:
    lk = network.likelihood
    if lk.kind == "gaussian":
        return gaussian_loglik(out, target, lk.obs_sigma)
    return categorical_loglik(out, target)


# --------------------------------------------------------------------------
# ELBO


@dataclass
class ElboTerms:
    nll: float
    kl_weights: float
    kl_arch: float
    kl_scale: float = 1.0

    @property
    def total(self) -> float:
        return self.nll + self.kl_scale * (self.kl_weights + self.kl_arch)


def elbo_loss(network: Network, x, y, dataset_size: int, noise: list[BlockNoise] | None,
              kl_scale: float = 1.0) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """(total, nll, kl_weights, kl_arch) as tensors on the active tape."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("elbo: empty batch")
    out, kl_arch = network.run(x, noise)
    nll = ad.mul(loglik(network, out, y), -dataset_size / x.shape[0])
    kl_w = network.kl_weights()
    zero = Tensor(0.0)
    kl_w = zero if kl_w is None else kl_w
    kl_arch = zero if kl_arch is None else kl_arch
    total = ad.add(nll, ad.mul(ad.add(kl_w, kl_arch), kl_scale))
    return total, nll, kl_w, kl_arch


def elbo_step(network: Network, batch, dataset_size: int, rng: np.random.Generator | None = None,
              *, kl_scale: float = 1.0, noise: list[BlockNoise] | None = None
              ) -> tuple[ElboTerms, Gradients]:
    """Loss terms and gradients for one minibatch.

    Fresh weight and architecture noise is drawn from ``rng`` unless
    ``noise`` fixes it.  Raises :class:`TrainingDiverged` naming the first
    non-finite term.
    """
    x, y = batch
    if noise is None:
        noise = network.sample_noise(rng if rng is not None else np.random.default_rng())
    prev = ad.set_finite_check(False)
    try:
        with ad.Tape():
            total, nll, kl_w, kl_a = elbo_loss(network, x, y, dataset_size, noise, kl_scale)
            for name, t in (("nll", nll), ("kl_weights", kl_w), ("kl_arch", kl_a)):
                if not np.isfinite(t.data).all():
                    raise TrainingDiverged(name)
            grads = backward_or_zero(total, network)
    finally:
        ad.set_finite_check(prev)
    for p in network.parameters():
        if not np.isfinite(grads[p]).all():
            raise TrainingDiverged("gradient")
    return ElboTerms(nll.item(), kl_w.item(), kl_a.item(), kl_scale), grads


def backward_or_zero(total: Tensor, network: Network) -> Gradients:
    params = network.parameters()
    if total._tape is None:
        return Gradients((p, np.zeros_like(p.data)) for p in params)
    g = ad.backward(total)
    return Gradients((p, g.get(p, np.zeros_like(p.data))) for p in params)


# --------------------------------------------------------------------------
# optimiser


class Adam:
    """Adam over a list of tensors, updated in place."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, lr_overrides: dict[int, float] | None = None):
        if not lr > 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        overrides = lr_overrides or {}
        self.lrs = [overrides.get(id(p), lr) for p in self.params]
        self.t = 0

    def step(self, grads: Gradients) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for i, p in enumerate(self.params):
            g = grads[p]
            m = self.m[i]
            v = self.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            p.data = p.data - (self.lrs[i] / c1) * m / denom


# --------------------------------------------------------------------------
# fit


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    kl_scale: float = 1.0
    early_stop_patience: int | None = None
    arch_learning_rate: float | None = None
    tau_size: float | None = None
    tau_depth: float | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.kl_scale <= 1.0:
            raise ValueError("kl_scale must lie in [0, 1]")
        self.betas = tuple(self.betas)


@dataclass
class RunLog:
    """Per-epoch records plus run metadata."""

    run_id: str = "run"
    meta: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, key: str) -> list:
        return [r[key] for r in self.rows]

    def to_jsonl(self) -> str:
        lines = [json.dumps({"meta": self.meta, "run_id": self.run_id}, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


def architecture_state(network: Network) -> dict:
    return {
        "sizes": [{"mu": a.mu, "sigma": a.sigma, "pi": a.probs().tolist(), "k": a.decode()}
                  for a in network.size_adapters],
        "skip_pi": [a.prob for a in network.skip_adapters],
    }


def make_optimizer(network: Network, config: TrainConfig) -> Adam:
    overrides = {}
    if config.arch_learning_rate is not None:
        overrides = {id(p): config.arch_learning_rate for p in network.arch_parameters()}
    return Adam(network.parameters(), config.learning_rate, config.betas, config.eps, overrides)


def apply_temperatures(network: Network, config: TrainConfig) -> None:
    if config.tau_size is not None:
        for a in network.size_adapters:
            a.set_temperature(config.tau_size)
    if config.tau_depth is not None:
        for a in network.skip_adapters:
            a.set_temperature(config.tau_depth)


def train_epoch(network: Network, opt: Adam, x: np.ndarray, y: np.ndarray, batch_size: int,
                rng: np.random.Generator, *, dataset_size: int | None = None,
                kl_scale: float = 1.0, epoch: int = 0) -> dict:
    """One shuffled pass over (x, y); returns mean loss terms over the steps."""
    n = x.shape[0]
    dataset_size = n if dataset_size is None else dataset_size
    order = rng.permutation(n)
    sums = np.zeros(3)
    steps = 0
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        try:
            terms, grads = elbo_step(network, (x[idx], y[idx]), dataset_size, rng, kl_scale=kl_scale)
        except TrainingDiverged as err:
            raise TrainingDiverged(err.term, epoch, steps) from None
        opt.step(grads)
        sums += (terms.nll, terms.kl_weights, terms.kl_arch)
        steps += 1
    nll, klw, kla = sums / max(steps, 1)
    return {"nll": nll, "kl_weights": klw, "kl_arch": kla,
            "total": nll + kl_scale * (klw + kla), "steps": steps}


def fit(network: Network, dataset, config: TrainConfig, *, validation=None,
        run_id: str = "run", callback=None, eval_samples: int = 10) -> RunLog:
    """Train ``network`` on ``dataset`` (an object with ``x`` and ``y`` arrays).

    One RunLog row per epoch.  With ``validation`` and a patience set, training
    stops once the held-out negative log-likelihood has not improved for that
    many epochs and the best parameters are restored.  ``callback(epoch,
    network, row)`` runs after each epoch and may add fields to ``row``.
    """
    from .predictive import predict, test_loglik  # predictive builds on this module

    x = np.asarray(dataset.x, dtype=np.float64)
    y = np.asarray(dataset.y)
    apply_temperatures(network, config)
    log = RunLog(run_id, {"config": _jsonable(asdict(config)),
                          "likelihood": asdict(network.likelihood),
                          "n_train": int(x.shape[0])})
    if config.epochs == 0:
        return log
    rng = np.random.default_rng(config.seed)
    eval_rng = np.random.default_rng([config.seed, 1])
    opt = make_optimizer(network, config)
    best = (math.inf, None, 0)
    for epoch in range(1, config.epochs + 1):
        stats = train_epoch(network, opt, x, y, config.batch_size, rng,
                            kl_scale=config.kl_scale, epoch=epoch)
        row = {"run_id": run_id, "epoch": epoch, **stats, **architecture_state(network)}
        if validation is not None:
            pr = predict(network, validation.x, eval_samples, eval_rng)
            val_nll = -test_loglik(pr, validation.y, network.likelihood)
            row["val_nll"] = val_nll
            if val_nll < best[0]:
                best = (val_nll, [p.data.copy() for p in network.parameters()], epoch)
        if callback is not None:
            callback(epoch, network, row)
        log.rows.append(row)
        if (config.early_stop_patience is not None and validation is not None
                and epoch - best[2] >= config.early_stop_patience):
            break
    if config.early_stop_patience is not None and best[1] is not None:
        for p, saved in zip(network.parameters(), best[1]):
            p.data = saved
        log.meta["best_epoch"] = best[2]
    return log


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj

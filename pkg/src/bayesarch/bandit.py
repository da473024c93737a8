"""Mushroom contextual bandit with greedy, epsilon-greedy and Thompson-sampling agents.

Each round a random mushroom is shown; the agent either consumes it
(action 1) or rejects it (action 0).  The reward model is a network on the
context concatenated with a one-hot action, trained on a FIFO replay buffer
with one pass over the buffer after every interaction.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import EDIBLE, POISONOUS
from .distributions import PROB_FLOOR
from .layers import Likelihood, Network, SizePriorSpec, decoded_sizes, mlp_spec
from .training import Adam, TrainingDiverged, train_epoch

REJECT, CONSUME = 0, 1
EDIBLE_REWARD = 5.0
POISON_GOOD, POISON_BAD = 5.0, -35.0
POISON_EXPECTED = 0.5 * (POISON_GOOD + POISON_BAD)
REWARD_SCALE = 35.0

AGENT_KINDS = ("greedy", "epsilon_greedy", "thompson_rigid", "thompson_adaptive",
               "thompson_warmstart")


class MushroomBandit:
    def __init__(self, contexts: np.ndarray, labels: np.ndarray, rng: np.random.Generator):
        self.contexts = np.asarray(contexts, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.contexts.shape[0] != self.labels.shape[0] or self.labels.size == 0:
            raise ValueError("MushroomBandit: contexts and labels must be non-empty and aligned")
        self.rng = rng

    @property
    def context_dim(self) -> int:
        return self.contexts.shape[1]

    def draw(self) -> int:
        return int(self.rng.integers(self.labels.size))

    def reward(self, idx: int, action: int) -> float:
        if action == REJECT:
            return 0.0
        if self.labels[idx] == EDIBLE:
            return EDIBLE_REWARD
        return POISON_BAD if self.rng.random() < 0.5 else POISON_GOOD

    def expected_reward(self, idx, action) -> np.ndarray | float:
        lab = self.labels[idx]
        consume = np.where(lab == POISONOUS, POISON_EXPECTED, EDIBLE_REWARD)
        out = np.where(np.asarray(action) == CONSUME, consume, 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def oracle_action(self, idx: int) -> int:
        return CONSUME if self.labels[idx] == EDIBLE else REJECT

    def regret(self, idx: int, action: int) -> float:
        return self.expected_reward(idx, self.oracle_action(idx)) - self.expected_reward(idx, action)


class ReplayBuffer:
    """FIFO store of (context index, action, reward) with fixed capacity."""

    def __init__(self, capacity: int = 4096):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def push(self, context_id: int, action: int, reward: float) -> None:
        self._items.append((context_id, action, reward))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ids, actions, rewards = zip(*self._items)
        return np.array(ids), np.array(actions), np.array(rewards, dtype=np.float64)


def network_inputs(contexts: np.ndarray, actions) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.int64)
    onehot = np.zeros((actions.size, 2))
    onehot[np.arange(actions.size), actions] = 1.0
    return np.hstack([np.atleast_2d(contexts), onehot])


# --------------------------------------------------------------------------
# agents


@dataclass(frozen=True)
class AgentConfig:
    kind: str
    hidden: tuple[int, ...] = (100, 100)
    epsilon: float = 0.05
    size_prior: tuple[float, float] = (50.0, 20.0)
    size_temperature: float = 3.0
    prob_floor: float = PROB_FLOOR
    weight_prior_sigma: float = 1.0
    init_sigma: float = 0.02
    obs_sigma: float = 0.5
    learning_rate: float = 5e-4
    batch_size: int = 64
    buffer_capacity: int = 4096

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def thompson(self) -> bool:
        return self.kind.startswith("thompson")

    def build_network(self, context_dim: int, rng: np.random.Generator) -> Network:
        size = None
        if self.kind == "thompson_adaptive":
            size = SizePriorSpec(self.size_prior[0], self.size_prior[1], self.size_temperature,
                                 prob_floor=self.prob_floor)
            if len(set(self.hidden)) != 1:
                raise ValueError("adaptive agent needs equal hidden widths")
        spec = mlp_spec(context_dim + 2, list(self.hidden), 1,
                        weight_mode="gaussian" if self.thompson else "point",
                        size=size, likelihood=Likelihood("gaussian", self.obs_sigma),
                        weight_prior_sigma=self.weight_prior_sigma, init_sigma=self.init_sigma)
        return Network.from_spec(spec, rng)


def reward_estimates(network: Network, context, noise=None) -> np.ndarray:
    """Estimated (scaled) reward of (reject, consume) for one context."""
    x = network_inputs(np.repeat(np.atleast_2d(context), 2, axis=0), [REJECT, CONSUME])
    if noise is None:
        return network.forward_hard(x)[:, 0]
    return network.output(x, noise)[:, 0]


def _argmax_reject_ties(est: np.ndarray) -> int:
    return CONSUME if est[CONSUME] > est[REJECT] else REJECT


def choose_thompson(network: Network, context, rng: np.random.Generator) -> int:
    """Act greedily with respect to one posterior sample of weights and architecture."""
    return _argmax_reject_ties(reward_estimates(network, context, network.sample_noise(rng)))


def choose_greedy(network: Network, context) -> int:
    return _argmax_reject_ties(reward_estimates(network, context))


def choose_epsilon(network: Network, context, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(2))
    return choose_greedy(network, context)


class Agent:
    def __init__(self, config: AgentConfig, context_dim: int, rng: np.random.Generator):
        self.config = config
        self.network = config.build_network(context_dim, rng)
        self.optimizer = Adam(self.network.parameters(), config.learning_rate)
        self.buffer = ReplayBuffer(config.buffer_capacity)

    def act(self, context, rng: np.random.Generator) -> int:
        c = self.config
        if c.thompson:
            return choose_thompson(self.network, context, rng)
        eps = c.epsilon if c.kind == "epsilon_greedy" else 0.0
        return choose_epsilon(self.network, context, eps, rng)

    def update(self, env: MushroomBandit, rng: np.random.Generator) -> None:
        """One epoch over the replay buffer."""
        ids, actions, rewards = self.buffer.arrays()
        x = network_inputs(env.contexts[ids], actions)
        train_epoch(self.network, self.optimizer, x, rewards / REWARD_SCALE,
                    self.config.batch_size, rng)

    def reward_rmse(self, env: MushroomBandit) -> float:
        """RMSE (raw units) of the mean reward estimate against expected rewards on the buffer."""
        ids, actions, _ = self.buffer.arrays()
        est = self.network.forward_hard(network_inputs(env.contexts[ids], actions))[:, 0]
        target = env.expected_reward(ids, actions)
        return float(np.sqrt(np.mean((est * REWARD_SCALE - target) ** 2)))


# --------------------------------------------------------------------------
# runs


@dataclass
class BanditRun:
    config: AgentConfig
    seed: int
    rows: list[dict] = field(default_factory=list)
    divergences: list[int] = field(default_factory=list)
    final_sizes: list[int] | None = None
    network: Network | None = None

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.array([r["cumulative_regret"] for r in self.rows])

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "cumulative_regret", "reward_rmse", "action", "context_id"])
        for r in self.rows:
            w.writerow([r["step"], repr(r["cumulative_regret"]), repr(r["reward_rmse"]),
                        r["action"], r["context_id"]])
        return buf.getvalue()


def run_bandit(config: AgentConfig, contexts: np.ndarray, labels: np.ndarray,
               n_interactions: int, seed: int, *, progress=None) -> BanditRun:
    """Play ``n_interactions`` rounds; deterministic given ``seed``.

    A non-finite loss during fine-tuning is recorded in ``divergences`` and
    the run carries on with the parameters from before that step.
    """
    root = np.random.SeedSequence(seed)
    env_seq, agent_seq, init_seq = root.spawn(3)
    env = MushroomBandit(contexts, labels, np.random.default_rng(env_seq))
    agent_rng = np.random.default_rng(agent_seq)
    agent = Agent(config, env.context_dim, np.random.default_rng(init_seq))
    run = BanditRun(config, seed)
    total = 0.0
    for step in range(1, n_interactions + 1):
        idx = env.draw()
        action = agent.act(env.contexts[idx], agent_rng)
        reward = env.reward(idx, action)
        total += env.regret(idx, action)
        agent.buffer.push(idx, action, reward)
        try:
            agent.update(env, agent_rng)
        except TrainingDiverged:
            run.divergences.append(step)
        run.rows.append({"step": step, "cumulative_regret": total,
                         "reward_rmse": agent.reward_rmse(env), "action": action,
                         "context_id": idx})
        if progress is not None:
            progress(step, run)
    run.network = agent.network
    if config.kind == "thompson_adaptive":
        run.final_sizes = [a.decode() for a in agent.network.size_adapters]
    return run


def warmstart_from(run: BanditRun | Network, base: AgentConfig | None = None) -> AgentConfig:
    """Rigid Thompson agent whose hidden widths are the decoded sizes of an adaptive run."""
    network = run.network if isinstance(run, BanditRun) else run
    if network is None or not network.size_adapters:
        raise ValueError("warmstart_from needs a finished adaptive run")
    base = base or (run.config if isinstance(run, BanditRun) else AgentConfig("thompson_adaptive"))
    return replace(base, kind="thompson_warmstart", hidden=tuple(decoded_sizes(network)))


def config_dict(config: AgentConfig) -> dict:
    d = asdict(config)
    d["hidden"] = list(d["hidden"])
    d["size_prior"] = list(d["size_prior"])
    return d

"""Double-DQN learner: replay buffers, exploration schedule, target updates."""

from __future__ import annotations

import random
from dataclasses import dataclass, field, asdict
from typing import NamedTuple

import numpy as np

from advhighway.qnet import QNetwork, batch_grad, forward, make_optimizer

N_ACTIONS = 12


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    dt: float = 1.0
    learning_rate: float = 1e-6
    epsilon0: float = 0.2
    anneal: float = 2e-6
    epsilon_min: float = 0.01
    steps_per_episode: int = 200
    episodes: int = 10_000
    batch_size: int = 32
    target_sync: int = 1000
    normal_capacity: int = 100_000
    crash_capacity: int = 10_000
    mix_fraction: float = 0.25
    hidden: tuple[int, ...] = (64, 64)
    optimizer: str = "adam"
    train_every: int = 1
    seed: int = 0
    # checkpoint selection by greedy validation rollouts every ``select_every`` episodes (0 = keep the last)
    select_every: int = 0
    select_rollouts: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.epsilon_min <= self.epsilon0 <= 1.0:
            raise ValueError("need 0 <= epsilon_min <= epsilon0 <= 1")
        if not 0.0 <= self.mix_fraction <= 1.0:
            raise ValueError("mix_fraction must lie in [0, 1]")
        if self.select_every < 0 or self.select_rollouts < 0:
            raise ValueError("select_every and select_rollouts must be non-negative")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def epsilon_at(cfg: TrainConfig, k: int) -> float:
    """Linear annealing per global step with a floor."""
    return max(cfg.epsilon_min, cfg.epsilon0 - cfg.anneal * k)


def greedy(q: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest index on ties
    return int(np.argmax(q))


def act(net: QNetwork, s: np.ndarray, eps: float, rng: random.Random) -> int:
    if eps > 0.0 and rng.random() < eps:
        return rng.randrange(N_ACTIONS)
    return greedy(forward(net, s))


class Transition(NamedTuple):
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool


def ddqn_target(online: QNetwork, target: QNetwork, tr: Transition, gamma: float) -> float:
    if tr.terminal:
        return float(tr.r)
    a_star = greedy(forward(online, tr.s_next))
    return float(tr.r + gamma * forward(target, tr.s_next)[a_star])


def ddqn_targets(online: QNetwork, target: QNetwork, r, s_next, terminal, gamma: float) -> np.ndarray:
    a_star = np.argmax(forward(online, s_next), axis=1)
    q_next = forward(target, s_next)[np.arange(len(a_star)), a_star]
    return r + gamma * (1.0 - terminal) * q_next


class ReplayBuffer:
    """FIFO ring with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, obs_dim))
        self.a = np.zeros(self.capacity, dtype=np.int64)
        self.r = np.zeros(self.capacity)
        self.s_next = np.zeros((self.capacity, obs_dim))
        self.terminal = np.zeros(self.capacity)
        self.size = 0
        self._head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, tr: Transition) -> None:
        i = self._head
        self.s[i] = tr.s
        self.a[i] = tr.a
        self.r[i] = tr.r
        self.s_next[i] = tr.s_next
        self.terminal[i] = float(tr.terminal)
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.size, size=n)

    def gather(self, idx: np.ndarray):
        return self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.terminal[idx]


@dataclass
class DualReplay:
    normal: ReplayBuffer
    at_fault_crash: ReplayBuffer
    mix_fraction: float = 0.25

    @classmethod
    def create(cls, cfg: TrainConfig, obs_dim: int) -> "DualReplay":
        return cls(ReplayBuffer(cfg.normal_capacity, obs_dim),
                   ReplayBuffer(cfg.crash_capacity, obs_dim), cfg.mix_fraction)

    def add_episode(self, transitions, at_fault_crash: bool) -> None:
        buf = self.at_fault_crash if at_fault_crash else self.normal
        for tr in transitions:
            buf.add(tr)

    def split(self, batch_size: int) -> tuple[int, int]:
        """(from normal, from crash) counts for one batch."""
        n_crash = int(round(self.mix_fraction * batch_size)) if len(self.at_fault_crash) else 0
        return batch_size - n_crash, n_crash

    def sample(self, batch_size: int, rng: np.random.Generator):
        n_norm, n_crash = self.split(batch_size)
        parts = [self.normal.gather(self.normal.sample_indices(n_norm, rng))]
        if n_crash:
            parts.append(self.at_fault_crash.gather(self.at_fault_crash.sample_indices(n_crash, rng)))
        if len(parts) == 1:
            return parts[0]
        return tuple(np.concatenate(cols) for cols in zip(*parts))


class UnderfilledBuffer(Exception):
    """``train_step`` was called before the normal buffer holds a full batch."""


class DivergenceError(RuntimeError):
    pass


@dataclass
class Learner:
    online: QNetwork
    target: QNetwork
    cfg: TrainConfig
    optimizer: object = None
    rng: np.random.Generator = field(default=None)
    updates: int = 0

    @classmethod
    def create(cls, obs_dim: int, cfg: TrainConfig) -> "Learner":
        rng = np.random.default_rng(cfg.seed)
        online = QNetwork.init([obs_dim, *cfg.hidden, N_ACTIONS], rng)
        return cls(online, online.copy(), cfg, make_optimizer(cfg.optimizer, cfg.learning_rate), rng)

    def sync_target(self) -> None:
        self.target.load_from(self.online)


def train_step(learner: Learner, dual: DualReplay, cfg: TrainConfig | None = None, batch=None) -> float:
    """One gradient step on a mixed batch; returns the TD loss.

    ``batch`` overrides sampling (used to overfit a fixed batch).  Raises
    :class:`UnderfilledBuffer` when there is not yet a batch worth of data.
    """
    cfg = cfg or learner.cfg
    if batch is None:
        if len(dual.normal) < cfg.batch_size:
            raise UnderfilledBuffer(f"{len(dual.normal)} < {cfg.batch_size}")
        batch = dual.sample(cfg.batch_size, learner.rng)
    s, a, r, s_next, terminal = batch
    y = ddqn_targets(learner.online, learner.target, r, s_next, terminal, cfg.gamma)
    loss, grads = batch_grad(learner.online, s, a, y)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite TD loss after {learner.updates} updates")
    learner.optimizer.update(learner.online.params(), grads)
    learner.updates += 1
    if learner.updates % cfg.target_sync == 0:
        learner.sync_target()
    return loss

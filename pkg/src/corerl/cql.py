"""Discrete conservative Q-learning on offline datasets, plus policy evaluation.

The loss on a batch is

    mean (Q(s, a) - y)^2 + alpha * mean(logsumexp_a' Q(s, a') - Q(s, a))

with ``y = r + gamma * (1 - done) * max_a' Q_target(s', a')``. The Q head is
a plain expected-value head.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import Batch, OfflineDataset, sample_indices
from .nn import AdamState, DenseNet, adam_step, load_tensors, logsumexp, save_tensors, softmax

HISTORY_COLUMNS = ("step", "td_loss", "cql_penalty", "mean_q")


@dataclass
class CQLConfig:
    alpha: float = 1.0
    gamma: float = 0.8
    lr: float = 1e-4
    batch: int = 64
    weight_decay: float = 5e-5
    target_sync_interval: int = 1000
    train_steps: int = 20000
    hidden: tuple = (64, 64)
    batch_norm: bool = True
    dropout: float = 0.2
    log_every: int = 100
    quantiles: int | None = None
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.quantiles:
            raise ValueError("quantile heads are not implemented; leave quantiles unset")
        if self.target_sync_interval < 1 or self.train_steps < 1 or self.batch < 1:
            raise ValueError("target_sync_interval, train_steps and batch must be positive")


class QNetwork:
    """Online and target state -> Q-value networks with fixed input standardization."""

    def __init__(self, state_dim: int, action_count: int, cfg: CQLConfig | None = None,
                 rng: np.random.Generator | None = None, state_mean=None, state_std=None):
        cfg = cfg or CQLConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim, self.action_count, self.cfg = state_dim, action_count, cfg
        self.net = DenseNet.mlp([state_dim, *cfg.hidden, action_count], rng,
                                batch_norm=cfg.batch_norm, dropout=cfg.dropout)
        self.target = self.net.copy()
        self.state_mean = np.zeros(state_dim) if state_mean is None else np.asarray(state_mean, np.float64)
        self.state_std = np.ones(state_dim) if state_std is None else np.asarray(state_std, np.float64)

    def norm(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=np.float64)
        if s.ndim == 1:
            s = s[None, :]
        if s.shape[1] != self.state_dim:
            raise ValueError(f"state dim {s.shape[1]} does not match Q-network input dim {self.state_dim}")
        return (s - self.state_mean) / self.state_std

    def q_values(self, states) -> np.ndarray:
        return self.net(self.norm(states))

    def target_q_values(self, states) -> np.ndarray:
        return self.target(self.norm(states))

    def act(self, state) -> int:
        """Greedy action; ties resolve to the lowest index."""
        return int(np.argmax(self.q_values(state)[0]))

    def sync_target(self):
        self.target.load_state(self.net.state())

    def save(self, path):
        tensors = {"state_mean": self.state_mean, "state_std": self.state_std}
        tensors.update({f"net.{k}": v for k, v in self.net.state().items()})
        tensors.update({f"target.{k}": v for k, v in self.target.state().items()})
        cfg = asdict(self.cfg)
        cfg["hidden"] = list(cfg["hidden"])
        save_tensors(path, tensors, {"kind": "qnet", "state_dim": self.state_dim,
                                     "action_count": self.action_count, "config": cfg})

    @classmethod
    def load(cls, path) -> "QNetwork":
        tensors, meta = load_tensors(path)
        if meta.get("kind") != "qnet":
            raise ValueError(f"{path} is not a Q-network checkpoint")
        q = cls(meta["state_dim"], meta["action_count"], CQLConfig(**meta["config"]))
        q.state_mean, q.state_std = tensors["state_mean"], tensors["state_std"]
        q.net.load_state({k[4:]: v for k, v in tensors.items() if k.startswith("net.")})
        q.target.load_state({k[7:]: v for k, v in tensors.items() if k.startswith("target.")})
        return q


def bellman_target(batch: Batch, target_q: Callable[[np.ndarray], np.ndarray] | QNetwork,
                   gamma: float) -> np.ndarray:
    """``r + gamma * (1 - done) * max_a' Q_target(s', a')``.

    ``target_q`` is a QNetwork (its target copy is used) or any callable
    mapping next states to a Q-value matrix.
    """
    q_next = target_q.target_q_values(batch.next_states) if isinstance(target_q, QNetwork) \
        else np.asarray(target_q(batch.next_states), dtype=np.float64)
    r = np.asarray(batch.rewards, dtype=np.float64)
    notdone = 1.0 - np.asarray(batch.dones, dtype=np.float64)
    return r + gamma * notdone * q_next.max(axis=1)


@dataclass
class CqlLoss:
    total: float
    td: float
    penalty: float
    mean_q: float


def cql_terms(q: np.ndarray, actions, targets, alpha: float) -> tuple[CqlLoss, np.ndarray]:
    """Loss on a Q-value matrix and its gradient with respect to that matrix."""
    q = np.asarray(q, dtype=np.float64)
    a = np.asarray(actions, dtype=np.int64)
    y = np.asarray(targets, dtype=np.float64)
    n = len(a)
    rows = np.arange(n)
    q_sa = q[rows, a]
    err = q_sa - y
    td = float((err * err).mean())
    penalty = float((logsumexp(q) - q_sa).mean())
    g = alpha * softmax(q) / n
    g[rows, a] += (2.0 * err - alpha) / n
    return CqlLoss(td + alpha * penalty, td, penalty, float(q_sa.mean())), g


def cql_loss(qnet: QNetwork, batch: Batch, targets, alpha: float,
             rng: np.random.Generator | None = None, mode: str = "train"):
    """Loss breakdown and parameter gradients of the online network.

    Targets are treated as constants (no gradient flows into them).
    """
    q, cache = qnet.net.forward(qnet.norm(batch.states), mode, rng)
    loss, g_q = cql_terms(q, batch.actions, targets, alpha)
    grads, _ = qnet.net.backward(cache, g_q)
    return loss, grads


def train_cql(ds: OfflineDataset, cfg: CQLConfig | None = None):
    """Returns ``(qnet, history)``; history rows are window means in HISTORY_COLUMNS order."""
    cfg = cfg or CQLConfig()
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    s = ds.states.astype(np.float64)
    sd = s.std(axis=0)
    qnet = QNetwork(ds.meta.state_dim, ds.meta.action_count, cfg, rng, s.mean(axis=0),
                    np.where(sd > 0, sd, 1.0))
    opt = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    params = qnet.net.params()
    history = []
    window = []
    for step in range(1, cfg.train_steps + 1):
        batch = ds.batch(sample_indices(len(ds), cfg.batch, rng))
        y = bellman_target(batch, qnet, cfg.gamma)
        loss, grads = cql_loss(qnet, batch, y, cfg.alpha, rng)
        adam_step(params, grads, opt)
        window.append((loss.td, loss.penalty, loss.mean_q))
        if step % cfg.target_sync_interval == 0:
            qnet.sync_target()
        if step % cfg.log_every == 0 or step == cfg.train_steps:
            m = np.mean(window, axis=0)
            history.append((step, float(m[0]), float(m[1]), float(m[2])))
            window = []
    return qnet, history


def dataset_mean_q(qnet: QNetwork, ds: OfflineDataset) -> float:
    q = qnet.q_values(ds.states)
    return float(q[np.arange(len(ds)), ds.actions].mean())


@dataclass
class EvalReport:
    returns: np.ndarray
    step_rewards: np.ndarray = field(repr=False)
    steps: np.ndarray = field(repr=False)

    @property
    def n_seeds(self) -> int:
        return self.returns.shape[0]

    @property
    def n_trials(self) -> int:
        return self.returns.shape[1]

    @property
    def mean(self) -> float:
        return float(self.returns.mean())

    @property
    def std(self) -> float:
        return float(self.returns.std())

    @property
    def avg_step_reward(self) -> float:
        return float(self.returns.sum() / self.steps.sum())

    def seed_means(self) -> np.ndarray:
        return self.returns.mean(axis=1)


def run_episode(policy: Callable[[np.ndarray], int], env, seed, cap: int | None = None):
    state = env.reset(seed=seed)
    total, t, done = 0.0, 0, False
    while not done and (cap is None or t < cap):
        state, r, done = env.step(policy(state))
        total += r
        t += 1
    return total, t


def evaluate_policy(qnet: QNetwork, env_factory: Callable[[], object], n_seeds: int = 5,
                    n_trials: int = 5, episode_cap: int | None = None, seed: int = 0) -> EvalReport:
    """Greedy rollouts; episode (i, j) resets its env with seed ``[seed, i, j]``."""
    returns = np.zeros((n_seeds, n_trials))
    steps = np.zeros((n_seeds, n_trials), dtype=np.int64)
    for i in range(n_seeds):
        for j in range(n_trials):
            env = env_factory()
            if env.state_dim != qnet.state_dim:
                raise ValueError(f"env state dim {env.state_dim} does not match Q-network input "
                                 f"dim {qnet.state_dim}")
            returns[i, j], steps[i, j] = run_episode(qnet.act, env, [seed, i, j], episode_cap)
    return EvalReport(returns, returns / np.maximum(steps, 1), steps)


def write_history(history, path, columns=HISTORY_COLUMNS):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for row in history:
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])

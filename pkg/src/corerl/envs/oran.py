"""ORAN-Cloud task allocation across a pool of servers.

Each step one task arrives and the agent picks the server that receives it.
A task starts at once when the server has CPU and RAM head-room and nothing is
waiting; otherwise it joins that server's FIFO queue. After the assignment the
reward is read off, then one time unit elapses.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

FIT_TOL = 1e-12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TaskRequest:
    c_req: float
    r_req: float
    t_occ: int

    def __post_init__(self):
        if not (0 < self.c_req <= 1 and 0 < self.r_req <= 1):
            raise ValueError(f"task demands must lie in (0, 1], got c={self.c_req}, r={self.r_req}")
        if int(self.t_occ) != self.t_occ or self.t_occ < 1:
            raise ValueError(f"t_occ must be a positive integer, got {self.t_occ}")

    @property
    def penalty(self) -> float:
        return (self.c_req + self.r_req) * self.t_occ


class ServerState:
    """One server: running tasks as ``[task, remaining]`` pairs plus a FIFO queue."""

    def __init__(self):
        self.active: list[list] = []
        self.queue: deque[TaskRequest] = deque()

    @property
    def u_cpu(self) -> float:
        return sum(t.c_req for t, _ in self.active)

    @property
    def u_ram(self) -> float:
        return sum(t.r_req for t, _ in self.active)

    @property
    def l_queue(self) -> int:
        return len(self.queue)

    @property
    def p_queue(self) -> float:
        return sum(t.penalty for t in self.queue)

    def fits(self, task: TaskRequest) -> bool:
        return (task.c_req <= 1.0 - self.u_cpu + FIT_TOL
                and task.r_req <= 1.0 - self.u_ram + FIT_TOL)

    def submit(self, task: TaskRequest):
        if not self.queue and self.fits(task):
            self.active.append([task, task.t_occ])
        else:
            self.queue.append(task)

    def tick(self):
        for entry in self.active:
            entry[1] -= 1
        self.active = [e for e in self.active if e[1] > 0]
        while self.queue and self.fits(self.queue[0]):
            task = self.queue.popleft()
            self.active.append([task, task.t_occ])


class SyntheticWorkload:
    """I.i.d. tasks with uniform CPU/RAM demands and uniform integer duration."""

    def __init__(self, c_range=(0.05, 0.5), r_range=(0.05, 0.5), t_range=(1, 30)):
        self.c_range, self.r_range, self.t_range = c_range, r_range, t_range

    def stream(self, rng: np.random.Generator) -> Iterator[TaskRequest]:
        while True:
            yield TaskRequest(float(rng.uniform(*self.c_range)), float(rng.uniform(*self.r_range)),
                              int(rng.integers(self.t_range[0], self.t_range[1] + 1)))


class TraceWorkload:
    """Replays a recorded task list from a seed-dependent offset, wrapping around."""

    def __init__(self, tasks: Sequence[TaskRequest]):
        if not tasks:
            raise ConfigError("trace workload is empty")
        self.tasks = list(tasks)

    def stream(self, rng: np.random.Generator) -> Iterator[TaskRequest]:
        i = int(rng.integers(len(self.tasks)))
        while True:
            yield self.tasks[i]
            i = (i + 1) % len(self.tasks)


def power_term(u_cpu) -> float:
    """Summed per-server power ``2 u (u)^1.4``."""
    u = np.asarray(u_cpu, dtype=np.float64)
    return float(np.sum(2.0 * u * u ** 1.4))


def oran_reward(u_cpu, p_queue, action: int, w1: float, w2: float) -> float:
    p_queue = np.asarray(p_queue, dtype=np.float64)
    total = p_queue.sum()
    latency = p_queue[action] / total if total > 0 else 0.0
    return -(w1 * power_term(u_cpu) + w2 * latency)


class OranCloudEnv:
    env_id = "oran"

    def __init__(self, n_servers: int = 10, action_count: int | None = None, w1: float = 0.1,
                 w2: float = 0.2, warmup_tasks: int = 1000, episode_len: int = 200,
                 workload=None):
        action_count = n_servers if action_count is None else action_count
        if n_servers < 1 or action_count != n_servers:
            raise ConfigError(f"action_count ({action_count}) must equal n_servers ({n_servers})")
        if warmup_tasks < 0 or episode_len < 1:
            raise ConfigError("warmup_tasks must be >= 0 and episode_len >= 1")
        self.n_servers = n_servers
        self.action_count = n_servers
        self.state_dim = 3 + 4 * n_servers
        self.w1, self.w2 = w1, w2
        self.warmup_tasks = warmup_tasks
        self.episode_len = episode_len
        self.workload = workload or SyntheticWorkload()
        self.servers: list[ServerState] = []
        self.task: TaskRequest | None = None
        self.t = 0
        self.done = True

    def reset(self, seed=None) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self._tasks = self.workload.stream(self.rng)
        self.servers = [ServerState() for _ in range(self.n_servers)]
        for i in range(self.warmup_tasks):
            self.servers[i % self.n_servers].submit(next(self._tasks))
            self._tick()
        self.task = next(self._tasks)
        self.t = 0
        self.done = False
        return self.observe()

    def _tick(self):
        for s in self.servers:
            s.tick()

    def observe(self) -> np.ndarray:
        s = self.servers
        return np.concatenate([
            [self.task.c_req, self.task.r_req, self.task.t_occ],
            [x.u_cpu for x in s], [x.u_ram for x in s],
            [x.l_queue for x in s], [x.p_queue for x in s],
        ]).astype(np.float64)

    def step(self, action: int):
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        if not 0 <= int(action) < self.n_servers:
            raise ValueError(f"action {action} outside [0, {self.n_servers})")
        action = int(action)
        self.servers[action].submit(self.task)
        reward = oran_reward([x.u_cpu for x in self.servers], [x.p_queue for x in self.servers],
                             action, self.w1, self.w2)
        self._tick()
        self.t += 1
        self.done = self.t >= self.episode_len
        self.task = next(self._tasks)
        return self.observe(), reward, self.done

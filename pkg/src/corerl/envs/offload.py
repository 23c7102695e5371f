"""Partial offloading of batched image-inference tasks from a battery device.

Real device measurements are replaced by a parametric cost table: for every
(task type, offload level) pair a Gaussian delay and a Gaussian energy draw,
both quoted for a 32-image task and scaled linearly by the image count.
"""

from __future__ import annotations

import numpy as np

from .oran import ConfigError

N_TYPES = 5
N_LEVELS = 5
TASK_TYPES = ("detect", "segment", "classify", "obb", "pose")
SIZES = (4, 8, 16, 24, 32)
RESOLUTIONS = ((640, 480), (1280, 720), (1920, 1080))


def default_cost_table() -> np.ndarray:
    """``(type, level) -> (delay_mean, delay_std, energy_mean, energy_std)`` for 32 images.

    Local and remote shares run in parallel, so delay is the slower of the two
    and energy is the sum of local compute plus radio transmission.
    """
    local_delay = np.array([1.6, 2.4, 0.8, 1.8, 2.0])
    server_delay = np.array([0.25, 0.4, 0.15, 0.3, 0.3])
    tx_delay = np.array([0.9, 1.1, 0.7, 0.9, 0.9])
    local_energy = np.array([0.012, 0.018, 0.006, 0.014, 0.015])
    tx_energy = 0.003
    table = np.zeros((N_TYPES, N_LEVELS, 4))
    for a in range(N_LEVELS):
        off = a / (N_LEVELS - 1)
        delay = np.maximum((1 - off) * local_delay, off * (tx_delay + server_delay))
        energy = (1 - off) * local_energy + off * tx_energy
        table[:, a] = np.stack([delay, 0.1 * delay, energy, 0.1 * energy], axis=1)
    return table


def offload_reward(t_delay: float, b_remain: float, w1: float, w2: float) -> float:
    return -(w1 * t_delay + w2 * (1.0 - b_remain))


class EdgeOffloadEnv:
    env_id = "offload"
    state_dim = 10
    action_count = N_LEVELS

    def __init__(self, w1: float = 0.5, w2: float = 1.0,
                 type_probs=(0.25, 0.2, 0.2, 0.3, 0.05), size_probs=(0.2, 0.2, 0.3, 0.2, 0.1),
                 episode_len: int = 200, battery_range=(0.6, 1.0), gpu_freq_range=(0.6, 1.0),
                 cost_table=None):
        self.type_probs = np.asarray(type_probs, dtype=np.float64)
        self.size_probs = np.asarray(size_probs, dtype=np.float64)
        for name, p, n in (("type_probs", self.type_probs, N_TYPES), ("size_probs", self.size_probs, len(SIZES))):
            if p.shape != (n,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ConfigError(f"{name} must be {n} non-negative probabilities summing to 1")
        self.cost_table = default_cost_table() if cost_table is None else np.asarray(cost_table, dtype=np.float64)
        if self.cost_table.shape != (N_TYPES, N_LEVELS, 4):
            raise ConfigError(f"cost_table must have shape {(N_TYPES, N_LEVELS, 4)}")
        self.w1, self.w2 = w1, w2
        self.episode_len = episode_len
        self.battery_range = battery_range
        self.gpu_freq_range = gpu_freq_range
        self.done = True

    def reset(self, seed=None) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self.battery = float(self.rng.uniform(*self.battery_range))
        self.gpu_freq = float(self.rng.uniform(*self.gpu_freq_range))
        self.t = 0
        self.done = False
        self._draw_task()
        return self.observe()

    def _draw_task(self):
        self.task_type = int(self.rng.choice(N_TYPES, p=self.type_probs))
        self.n_images = SIZES[int(self.rng.choice(len(SIZES), p=self.size_probs))]
        self.resolution = RESOLUTIONS[int(self.rng.integers(len(RESOLUTIONS)))]

    def observe(self) -> np.ndarray:
        s = np.zeros(self.state_dim)
        s[self.task_type] = 1.0
        s[5] = self.n_images
        s[6] = self.resolution[0] / 1920
        s[7] = self.resolution[1] / 1080
        s[8] = self.battery
        s[9] = self.gpu_freq
        return s

    def step(self, action: int):
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        if not 0 <= int(action) < N_LEVELS:
            raise ValueError(f"action {action} outside [0, {N_LEVELS})")
        d_mu, d_sd, e_mu, e_sd = self.cost_table[self.task_type, int(action)]
        scale = self.n_images / 32
        t_delay = max(0.0, float(self.rng.normal(d_mu, d_sd))) * scale
        energy = max(0.0, float(self.rng.normal(e_mu, e_sd))) * scale
        self.battery = max(0.0, self.battery - energy)
        reward = offload_reward(t_delay, self.battery, self.w1, self.w2)
        self.t += 1
        self.done = self.t >= self.episode_len or self.battery <= 0.0
        self._draw_task()
        return self.observe(), reward, self.done

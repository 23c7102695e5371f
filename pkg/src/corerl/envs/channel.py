"""Channel selection with stale CSI.

Every channel follows its own Gilbert-Elliott good/bad chain. The agent sees a
53-value CSI column per channel, but only the column of the channel it used
last is refreshed; the rest keep whatever was measured when they were last
used.
"""

from __future__ import annotations

import numpy as np

from .oran import ConfigError

# (p_good_to_bad, p_bad_to_good, loss_good, loss_bad)
DEFAULT_CHANNELS = (
    (0.05, 0.30, 0.02, 0.45),
    (0.10, 0.25, 0.03, 0.55),
    (0.20, 0.20, 0.05, 0.60),
    (0.08, 0.40, 0.04, 0.35),
    (0.15, 0.15, 0.02, 0.70),
    (0.25, 0.35, 0.06, 0.50),
    (0.12, 0.10, 0.08, 0.65),
    (0.30, 0.30, 0.03, 0.80),
)


class ChannelEnv:
    env_id = "channel"

    def __init__(self, channels=DEFAULT_CHANNELS, csi_dim: int = 53, episode_len: int = 200,
                 packets: int = 100, csi_noise: float = 0.05, map_seed: int = 0):
        self.params = np.asarray(channels, dtype=np.float64)
        if self.params.ndim != 2 or self.params.shape[1] != 4:
            raise ConfigError("channels must be rows of (p_gb, p_bg, loss_good, loss_bad)")
        if np.any(self.params < 0) or np.any(self.params > 1):
            raise ConfigError("channel probabilities must lie in [0, 1]")
        self.n_channels = len(self.params)
        self.action_count = self.n_channels
        self.csi_dim = csi_dim
        self.state_dim = csi_dim * self.n_channels
        self.episode_len = episode_len
        self.packets = packets
        self.csi_noise = csi_noise
        map_rng = np.random.default_rng(map_seed)
        self.csi_gain = map_rng.uniform(0.5, 1.5, size=csi_dim)
        self.csi_bias = map_rng.normal(0.0, 0.1, size=csi_dim)
        self.done = True

    def loss_prob(self, ch: int) -> float:
        return float(self.params[ch, 2] if self.good[ch] else self.params[ch, 3])

    def _measure(self, ch: int) -> np.ndarray:
        gain = 1.0 - self.loss_prob(ch)
        return self.csi_gain * gain + self.csi_bias + self.rng.normal(0.0, self.csi_noise, self.csi_dim)

    def reset(self, seed=None) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        p_gb, p_bg = self.params[:, 0], self.params[:, 1]
        stationary_good = np.where(p_gb + p_bg > 0, p_bg / np.maximum(p_gb + p_bg, 1e-300), 1.0)
        self.good = self.rng.random(self.n_channels) < stationary_good
        self.csi = np.stack([self._measure(c) for c in range(self.n_channels)])
        self.t = 0
        self.done = False
        return self.observe()

    def observe(self) -> np.ndarray:
        # channel-major: values of channel c occupy [c*csi_dim, (c+1)*csi_dim)
        return self.csi.ravel().copy()

    def step(self, action: int):
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        if not 0 <= int(action) < self.n_channels:
            raise ValueError(f"action {action} outside [0, {self.n_channels})")
        ch = int(action)
        u = self.rng.random(self.n_channels)
        flip = np.where(self.good, u < self.params[:, 0], u < self.params[:, 1])
        self.good = self.good ^ flip
        lost = int(self.rng.binomial(self.packets, self.loss_prob(ch)))
        reward = -lost / self.packets
        self.csi[ch] = self._measure(ch)
        self.t += 1
        self.done = self.t >= self.episode_len
        return self.observe(), reward, self.done

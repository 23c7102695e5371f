"""Simulated wireless control tasks, behaviour policies and offline data collection."""

from __future__ import annotations

import numpy as np

from ..data import DatasetMeta, OfflineDataset
from .channel import ChannelEnv
from .offload import EdgeOffloadEnv, offload_reward
from .oran import (ConfigError, OranCloudEnv, ServerState, SyntheticWorkload, TaskRequest,
                   TraceWorkload, oran_reward, power_term)
from .policies import (Policy, extremes_action, greedy_action, make_policy,
                       round_robin_action)
from .trace import TraceError, load_workload_trace

ENVS = {"oran": OranCloudEnv, "offload": EdgeOffloadEnv, "channel": ChannelEnv}


def make_env(env_id: str, **params):
    """Build an environment from plain config values.

    For ``oran``, ``workload`` may be a dict with ``trace_path`` (plus optional
    ``column_map`` and ``t_scale``) or synthetic ranges ``c_range``,
    ``r_range``, ``t_range``.
    """
    if env_id not in ENVS:
        raise ConfigError(f"unknown env id {env_id!r}; choose one of {sorted(ENVS)}")
    params = dict(params)
    if env_id == "oran" and isinstance(params.get("workload"), dict):
        spec = dict(params["workload"])
        if "trace_path" in spec:
            tasks = load_workload_trace(spec.pop("trace_path"), spec.pop("column_map", None),
                                        spec.pop("t_scale", 1.0))
            if spec:
                raise ConfigError(f"unknown trace workload keys {sorted(spec)}")
            params["workload"] = TraceWorkload(tasks)
        else:
            params["workload"] = SyntheticWorkload(**spec)
    try:
        return ENVS[env_id](**params)
    except TypeError as e:
        raise ConfigError(f"bad parameters for env {env_id!r}: {e}") from None


def generate_dataset(env, policy: Policy, n_transitions: int, seed: int,
                     policy_name: str = "custom") -> OfflineDataset:
    """Roll whole episodes until ``n_transitions`` are collected.

    Episode ``i`` resets the env with seed ``[seed, i]`` and drives the
    policy with its own generator seeded ``[seed, i, 1]``. The final episode
    is cut short when the budget runs out (its last record keeps done=False).
    """
    if n_transitions <= 0:
        raise ValueError(f"n_transitions must be positive, got {n_transitions}")
    d = env.state_dim
    states = np.empty((n_transitions, d))
    nexts = np.empty((n_transitions, d))
    actions = np.empty(n_transitions, dtype=np.int64)
    rewards = np.empty(n_transitions)
    dones = np.zeros(n_transitions, dtype=bool)
    trajs = np.empty(n_transitions, dtype=np.int64)
    steps = np.empty(n_transitions, dtype=np.int64)
    i = ep = 0
    while i < n_transitions:
        state = env.reset(seed=[seed, ep])
        prng = np.random.default_rng([seed, ep, 1])
        t = 0
        done = False
        while not done and i < n_transitions:
            a = policy(state, t, prng)
            nxt, r, done = env.step(a)
            states[i], actions[i], rewards[i], nexts[i] = state, a, r, nxt
            dones[i], trajs[i], steps[i] = done, ep, t
            state = nxt
            i += 1
            t += 1
        ep += 1
    meta = DatasetMeta(env_id=env.env_id, state_dim=d, action_count=env.action_count,
                       transition_count=n_transitions, traj_count=ep,
                       generator_policy=policy_name, seed=int(seed))
    return OfflineDataset(meta, states, actions, rewards, nexts, dones, trajs, steps)


__all__ = [
    "ChannelEnv", "ConfigError", "EdgeOffloadEnv", "ENVS", "OranCloudEnv", "Policy", "ServerState",
    "SyntheticWorkload", "TaskRequest", "TraceError", "TraceWorkload", "extremes_action",
    "generate_dataset", "greedy_action", "load_workload_trace", "make_env", "make_policy",
    "offload_reward", "oran_reward", "power_term", "round_robin_action",
]

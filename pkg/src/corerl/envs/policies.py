"""Behaviour policies used to collect offline data.

Every policy is a callable ``policy(state, counter, rng) -> action`` where
``counter`` is the step index inside the current episode.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

Policy = Callable[[np.ndarray, int, np.random.Generator], int]

GREEDY_BATTERY_THRESHOLD = 0.5
CSI_DIM = 53


def _oran_servers(state) -> int:
    m, rem = divmod(len(state) - 3, 4)
    if rem or m < 1:
        raise ValueError(f"state of length {len(state)} is not an ORAN state")
    return m


def greedy_action(env_id: str, state) -> int:
    state = np.asarray(state)
    if env_id == "oran":
        m = _oran_servers(state)
        return int(np.argmin(state[3 + 2 * m: 3 + 3 * m]))
    if env_id == "offload":
        if len(state) != 10:
            raise ValueError(f"offload state must have 10 entries, got {len(state)}")
        return 0 if state[8] >= GREEDY_BATTERY_THRESHOLD else 4
    if env_id == "channel":
        if len(state) % CSI_DIM:
            raise ValueError(f"channel state length {len(state)} is not a multiple of {CSI_DIM}")
        return int(np.argmax(state.reshape(-1, CSI_DIM).mean(axis=1)))
    raise ValueError(f"unknown env_id {env_id!r}")


def round_robin_action(counter: int, action_count: int) -> int:
    return counter % action_count


def extremes_action(state, rng: np.random.Generator) -> int:
    """ORAN only: a fair coin picks the least or the most loaded server.

    Load is CPU utilisation plus queue length, so the collected rewards swing
    between near-best and near-worst for similar states.
    """
    m = _oran_servers(state)
    state = np.asarray(state)
    load = state[3: 3 + m] + state[3 + 2 * m: 3 + 3 * m]
    return int(np.argmin(load) if rng.random() < 0.5 else np.argmax(load))


def make_policy(name: str, env_id: str, action_count: int) -> Policy:
    if name == "greedy":
        return lambda s, c, rng: greedy_action(env_id, s)
    if name in ("round_robin", "round-robin", "rr"):
        return lambda s, c, rng: round_robin_action(c, action_count)
    if name == "random":
        return lambda s, c, rng: int(rng.integers(action_count))
    if name == "extremes":
        if env_id != "oran":
            raise ValueError("the extremes policy is defined for the oran env only")
        return lambda s, c, rng: extremes_action(s, rng)
    raise ValueError(f"unknown policy {name!r}; choose greedy, round_robin, random or extremes")

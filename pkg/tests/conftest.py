import json

import numpy as np
import pytest

from corerl.data import OfflineDataset, Transition


def make_dataset(n=20, state_dim=3, action_count=4, traj_len=5, seed=0, env_id="toy"):
    rng = np.random.default_rng(seed)
    trans = []
    for i in range(n):
        traj, step = divmod(i, traj_len)
        last = step == traj_len - 1 or i == n - 1
        trans.append(Transition(rng.normal(size=state_dim), int(rng.integers(action_count)),
                                float(rng.normal()), rng.normal(size=state_dim),
                                last and step == traj_len - 1, traj, step))
    return OfflineDataset.from_transitions(trans, env_id=env_id, state_dim=state_dim,
                                           action_count=action_count, seed=seed)


def tiny_config(out_dir, **sections):
    cfg = {
        "seed": 3,
        "out_dir": str(out_dir),
        "env": {"id": "oran", "params": {"warmup_tasks": 100, "episode_len": 50}},
        "dataset": {"policy": "round_robin", "size": 600},
        "kmeans": {"k": 20, "max_iter": 30},
        "gap": {"k_list": [5, 20]},
        "cvae": {"iters": 60, "hidden": 16, "d_z": 4},
        "relabel": {"tau": 0.3},
        "cql": {"train_steps": 120, "hidden": [16, 16], "target_sync_interval": 50, "log_every": 40},
        "eval": {"n_seeds": 2, "n_trials": 2, "episode_cap": 20},
    }
    for name, values in sections.items():
        cfg.setdefault(name, {}).update(values)
    return cfg


@pytest.fixture
def tiny_config_file(tmp_path):
    def write(**sections):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(tiny_config(tmp_path / "run", **sections)))
        return path
    return write


def random_mdp(rng, n_states, n_actions):
    P = rng.dirichlet(np.ones(n_states) * 0.5, size=(n_states, n_actions))
    R = rng.uniform(-1, 1, size=(n_states, n_actions))
    return P, R


def value_iteration(P, R, gamma, tol=1e-12):
    Q = np.zeros_like(R)
    while True:
        new = R + gamma * P @ Q.max(axis=1)
        if np.abs(new - Q).max() < tol:
            return new
        Q = new


def tabular_dataset(P, R, per_pair, rng):
    """Full-coverage dataset with one-hot states; also returns the empirical transition model."""
    n_s, n_a = R.shape
    eye = np.eye(n_s)
    trans, counts = [], np.zeros_like(P)
    for s in range(n_s):
        for a in range(n_a):
            for s2 in rng.choice(n_s, size=per_pair, p=P[s, a]):
                counts[s, a, s2] += 1
                trans.append(Transition(eye[s], a, float(R[s, a]), eye[s2], False, len(trans), 0))
    ds = OfflineDataset.from_transitions(trans, env_id="tabular", state_dim=n_s, action_count=n_a)
    return ds, counts / per_pair

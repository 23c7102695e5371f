"""Transitions, offline datasets, the on-disk record format and batch sampling.

A dataset on disk is a pair of files sharing a base path::

    <base>.meta.json   sidecar with the DatasetMeta fields
    <base>.records     one JSON object per line with keys s, a, r, s2, done, traj, t

States and rewards are held as float32. Each value is written as the shortest
decimal of its exact float64 widening, so reading back is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RECORD_KEYS = ("s", "a", "r", "s2", "done", "traj", "t")


class DatasetError(ValueError):
    """Raised for malformed, inconsistent or non-finite datasets."""


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool
    traj_id: int
    step: int

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        return (
            np.array_equal(self.state, other.state)
            and self.action == other.action
            and np.float32(self.reward) == np.float32(other.reward)
            and np.array_equal(self.next_state, other.next_state)
            and self.done == other.done
            and self.traj_id == other.traj_id
            and self.step == other.step
        )

    __hash__ = None


@dataclass(frozen=True)
class DatasetMeta:
    env_id: str
    state_dim: int
    action_count: int
    transition_count: int
    traj_count: int
    generator_policy: str
    seed: int


@dataclass(frozen=True)
class Batch:
    """Column view of a set of transitions, ready for vectorized math."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)


class OfflineDataset:
    """Immutable, column-stored collection of transitions plus metadata.

    Columns are read-only numpy arrays; ``ds[i]`` materializes a Transition.
    """

    def __init__(self, meta: DatasetMeta, states, actions, rewards, next_states,
                 dones, traj_ids, steps, *, validate: bool = True):
        self.meta = meta
        self.states = _frozen(np.asarray(states, dtype=np.float32).reshape(-1, meta.state_dim))
        self.next_states = _frozen(np.asarray(next_states, dtype=np.float32).reshape(-1, meta.state_dim))
        self.actions = _frozen(np.asarray(actions, dtype=np.int64).reshape(-1))
        self.rewards = _frozen(np.asarray(rewards, dtype=np.float32).reshape(-1))
        self.dones = _frozen(np.asarray(dones, dtype=bool).reshape(-1))
        self.traj_ids = _frozen(np.asarray(traj_ids, dtype=np.int64).reshape(-1))
        self.steps = _frozen(np.asarray(steps, dtype=np.int64).reshape(-1))
        if validate:
            self.validate()

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], *, env_id: str, state_dim: int,
                         action_count: int, generator_policy: str = "unknown", seed: int = 0):
        n = len(transitions)
        traj = [t.traj_id for t in transitions]
        meta = DatasetMeta(env_id=env_id, state_dim=state_dim, action_count=action_count,
                           transition_count=n, traj_count=len(set(traj)),
                           generator_policy=generator_policy, seed=seed)
        if n == 0:
            empty = np.zeros((0, state_dim))
            return cls(meta, empty, [], [], empty, [], [], [])
        return cls(
            meta,
            np.stack([np.asarray(t.state, dtype=np.float32) for t in transitions]),
            [t.action for t in transitions],
            [t.reward for t in transitions],
            np.stack([np.asarray(t.next_state, dtype=np.float32) for t in transitions]),
            [t.done for t in transitions],
            traj,
            [t.step for t in transitions],
        )

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, i) -> Transition:
        i = int(i)
        return Transition(self.states[i], int(self.actions[i]), float(self.rewards[i]),
                          self.next_states[i], bool(self.dones[i]), int(self.traj_ids[i]),
                          int(self.steps[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        return self.meta == other.meta and all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("states", "actions", "rewards", "next_states", "dones", "traj_ids", "steps")
        )

    __hash__ = None

    @property
    def transitions(self) -> list[Transition]:
        return list(self)

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx])

    def with_rewards(self, rewards) -> "OfflineDataset":
        """Copy of this dataset with the reward column replaced."""
        rewards = np.asarray(rewards, dtype=np.float32)
        if rewards.shape != self.rewards.shape:
            raise DatasetError(f"reward column has shape {rewards.shape}, expected {self.rewards.shape}")
        return OfflineDataset(self.meta, self.states, self.actions, rewards, self.next_states,
                              self.dones, self.traj_ids, self.steps)

    def validate(self):
        m = self.meta
        n = len(self.actions)
        if m.action_count < 1 or m.state_dim < 1:
            raise DatasetError(f"invalid dims in meta: state_dim={m.state_dim}, action_count={m.action_count}")
        for name in ("states", "next_states", "rewards", "dones", "traj_ids", "steps"):
            if len(getattr(self, name)) != n:
                raise DatasetError(f"column {name!r} has {len(getattr(self, name))} rows, expected {n}")
        if m.transition_count != n:
            raise DatasetError(f"meta transition_count={m.transition_count} but dataset holds {n} records")
        for name in ("states", "next_states", "rewards"):
            col = getattr(self, name)
            if not np.all(np.isfinite(col)):
                bad = int(np.flatnonzero(~np.isfinite(col).reshape(n, -1).all(axis=1))[0])
                raise DatasetError(f"non-finite value in {name!r} of record {bad}")
        if n == 0:
            return
        bad = np.flatnonzero((self.actions < 0) | (self.actions >= m.action_count))
        if len(bad):
            raise DatasetError(f"record {bad[0]}: action {self.actions[bad[0]]} outside [0, {m.action_count})")
        if np.any(self.traj_ids < 0) or np.any(self.steps < 0):
            raise DatasetError("negative traj or step index")
        same = self.traj_ids[1:] == self.traj_ids[:-1]
        bad = np.flatnonzero(same & (self.steps[1:] != self.steps[:-1] + 1))
        if len(bad):
            raise DatasetError(f"record {bad[0] + 1}: step does not follow step of previous record")
        bad = np.flatnonzero(same & self.dones[:-1])
        if len(bad):
            raise DatasetError(f"record {bad[0]}: done=true before the end of trajectory")
        starts = self.traj_ids[np.r_[True, ~same]]
        if len(np.unique(starts)) != len(starts):
            raise DatasetError("trajectories are not contiguous runs of equal traj id")
        if len(starts) != m.traj_count:
            raise DatasetError(f"meta traj_count={m.traj_count} but dataset holds {len(starts)} trajectories")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def dataset_paths(path) -> tuple[Path, Path]:
    """Sidecar and record paths for a dataset base path."""
    base = Path(path)
    name = base.name
    for suffix in (".meta.json", ".records"):
        if name.endswith(suffix):
            base = base.with_name(name[: -len(suffix)])
    return base.with_name(base.name + ".meta.json"), base.with_name(base.name + ".records")


def write_dataset(ds: OfflineDataset, path) -> tuple[Path, Path]:
    meta_path, rec_path = dataset_paths(path)
    if not meta_path.parent.is_dir():
        raise OSError(f"cannot write dataset to {meta_path}: parent directory does not exist")
    ds.validate()
    try:
        with open(rec_path, "w") as f:
            for row in _record_lines(ds):
                f.write(row)
                f.write("\n")
        with open(meta_path, "w") as f:
            json.dump(asdict(ds.meta), f, indent=2)
            f.write("\n")
    except OSError as e:
        raise OSError(f"failed writing dataset to {rec_path}: {e}") from e
    return meta_path, rec_path


def _record_lines(ds: OfflineDataset) -> Iterable[str]:
    # float32 -> float64 is exact and json prints the shortest float64 repr; good enough
    # for a bit-exact float32 round trip, and much faster than per-element formatting.
    states = ds.states.astype(np.float64).tolist()
    nexts = ds.next_states.astype(np.float64).tolist()
    rewards = ds.rewards.astype(np.float64).tolist()
    actions = ds.actions.tolist()
    dones = ds.dones.tolist()
    trajs = ds.traj_ids.tolist()
    steps = ds.steps.tolist()
    for i in range(len(ds)):
        yield json.dumps({"s": states[i], "a": actions[i], "r": rewards[i], "s2": nexts[i],
                          "done": dones[i], "traj": trajs[i], "t": steps[i]},
                         separators=(",", ":"), allow_nan=False)


def read_dataset(path) -> OfflineDataset:
    meta_path, rec_path = dataset_paths(path)
    for p in (meta_path, rec_path):
        if not p.is_file():
            raise FileNotFoundError(f"dataset file not found: {p}")
    with open(meta_path) as f:
        raw = json.load(f)
    names = {f.name for f in fields(DatasetMeta)}
    if set(raw) != names:
        raise DatasetError(f"{meta_path}: meta keys {sorted(raw)} do not match {sorted(names)}")
    meta = DatasetMeta(**raw)
    d = meta.state_dim
    states, nexts, actions, rewards, dones, trajs, steps = [], [], [], [], [], [], []
    with open(rec_path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{rec_path}:{lineno}: malformed record ({e.msg})") from None
            if not isinstance(rec, dict) or set(rec) != set(RECORD_KEYS):
                raise DatasetError(f"{rec_path}:{lineno}: record keys must be exactly {RECORD_KEYS}")
            if not (isinstance(rec["s"], list) and isinstance(rec["s2"], list)):
                raise DatasetError(f"{rec_path}:{lineno}: s and s2 must be lists")
            if len(rec["s"]) != d or len(rec["s2"]) != d:
                raise DatasetError(f"{rec_path}:{lineno}: state dims {len(rec['s'])}/{len(rec['s2'])} "
                                   f"do not match state_dim={d}")
            a = rec["a"]
            if not isinstance(a, int) or isinstance(a, bool) or not 0 <= a < meta.action_count:
                raise DatasetError(f"{rec_path}:{lineno}: action {a!r} outside [0, {meta.action_count})")
            states.append(rec["s"])
            nexts.append(rec["s2"])
            actions.append(a)
            rewards.append(rec["r"])
            dones.append(bool(rec["done"]))
            trajs.append(rec["traj"])
            steps.append(rec["t"])
    if len(actions) != meta.transition_count:
        raise DatasetError(f"{rec_path}: meta says transition_count={meta.transition_count} "
                           f"but file holds {len(actions)} records")
    if not actions:
        empty = np.zeros((0, d))
        return OfflineDataset(meta, empty, [], [], empty, [], [], [])
    return OfflineDataset(meta, np.array(states), actions, rewards, np.array(nexts),
                          dones, trajs, steps)


def sample_indices(n: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    if n <= 0:
        raise DatasetError("cannot sample from an empty dataset")
    if batch_size <= 0:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    return rng.integers(0, n, size=batch_size)


def sample_batch(ds: OfflineDataset, batch_size: int, rng: np.random.Generator) -> list[Transition]:
    """Uniform sampling with replacement."""
    return [ds[i] for i in sample_indices(len(ds), batch_size, rng)]


@dataclass
class DatasetStats:
    mean: float
    std: float
    min: float
    max: float
    bin_edges: np.ndarray
    counts: np.ndarray


def reward_histogram(rewards, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(rewards, dtype=np.float64)
    lo, hi = float(r.min()), float(r.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(r, bins=bins, range=(lo, hi))
    return counts, edges


def dataset_stats(ds: OfflineDataset, bins: int = 20) -> DatasetStats:
    if len(ds) == 0:
        raise DatasetError("statistics of an empty dataset are undefined")
    r = ds.rewards.astype(np.float64)
    counts, edges = reward_histogram(r, bins)
    return DatasetStats(mean=float(r.mean()), std=float(r.std()), min=float(r.min()),
                        max=float(r.max()), bin_edges=edges, counts=counts)


"""State-space clustering and per-cluster expert labeling.

Expert samples are the highest-reward transitions inside each k-means cluster
of (standardized) states. The intra-cluster reward gap, max minus min reward
per cluster, is the diagnostic for how much local reward signal a dataset
carries.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import OfflineDataset

_CHUNK = 4096


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_trace: tuple = ()


@dataclass
class ExpertLabeling:
    expert_idx: np.ndarray
    nonexpert_idx: np.ndarray
    per_cluster: int

    @property
    def n(self) -> int:
        return len(self.expert_idx) + len(self.nonexpert_idx)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[self.expert_idx] = True
        return m


def standardize(states) -> np.ndarray:
    """Per-dimension z-score; constant dimensions are left unscaled (only centred)."""
    x = np.asarray(states, dtype=np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (x - mu) / sd


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] - 2.0 * x @ c.T + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _assign(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    labels = np.empty(len(x), dtype=np.int64)
    for lo in range(0, len(x), _CHUNK):
        labels[lo:lo + _CHUNK] = np.argmin(_sq_dists(x[lo:lo + _CHUNK], c), axis=1)
    return labels


def _point_sq_err(x: np.ndarray, c: np.ndarray, labels: np.ndarray) -> np.ndarray:
    diff = x - c[labels]
    return (diff * diff).sum(axis=1)


def _centroids(x: np.ndarray, labels: np.ndarray, k: int):
    counts = np.bincount(labels, minlength=k)
    sums = np.stack([np.bincount(labels, weights=x[:, j], minlength=k) for j in range(x.shape[1])], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts[:, None], counts


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        np.minimum(closest, ((x - centers[j]) ** 2).sum(axis=1), out=closest)
    return centers


def _lloyd(x: np.ndarray, k: int, max_iter: int, rng: np.random.Generator) -> ClusterModel:
    c = _kmeans_pp(x, k, rng)
    labels = _assign(x, c)
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        new_c, counts = _centroids(x, labels, k)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            # re-seed each empty cluster at the point currently worst served
            err = _point_sq_err(x, np.where(counts[:, None] > 0, new_c, c), labels)
            for j in empty:
                far = int(np.argmax(err))
                new_c[j] = x[far]
                err[far] = -1.0
        else:
            new_c = np.where(counts[:, None] > 0, new_c, c)
        c = new_c
        inertia = float(_point_sq_err(x, c, labels).sum())
        new_labels = _assign(x, c)
        inertia_after = float(_point_sq_err(x, c, new_labels).sum())
        if inertia_after > inertia * (1 + 1e-9) + 1e-12:
            # the expanded-form distances picked a worse centroid; keep the old labels
            new_labels = labels
            inertia_after = inertia
        if trace:
            assert inertia_after <= trace[-1] * (1 + 1e-9) + 1e-12, "k-means inertia increased"
        trace.append(inertia_after)
        if np.array_equal(new_labels, labels) and not len(empty):
            labels = new_labels
            break
        labels = new_labels
    inertia = float(_point_sq_err(x, c, labels).sum())
    return ClusterModel(k, c, labels, inertia, it, tuple(trace))


def kmeans_fit(states, k: int, max_iter: int = 100, seed: int = 0, restarts: int = 1) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding; the lowest-inertia restart wins."""
    x = np.asarray(states, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if max_iter < 1 or restarts < 1:
        raise ValueError("max_iter and restarts must be at least 1")
    if k > len(x):
        raise ValueError(f"k={k} exceeds the number of points ({len(x)})")
    n_distinct = len(np.unique(x, axis=0))
    if k > n_distinct:
        raise ValueError(f"k={k} exceeds the number of distinct states ({n_distinct})")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        model = _lloyd(x, k, max_iter, rng)
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def select_experts(ds: OfflineDataset | np.ndarray, model: ClusterModel, n_e: int = 1) -> ExpertLabeling:
    """Top-``n_e`` rewards per cluster are experts; reward ties go to the lower index."""
    if n_e <= 0:
        raise ValueError(f"n_e must be positive, got {n_e}")
    rewards = ds.rewards if isinstance(ds, OfflineDataset) else np.asarray(ds)
    labels = model.assignment
    if len(labels) != len(rewards):
        raise ValueError(f"cluster model covers {len(labels)} points, dataset has {len(rewards)}")
    idx = np.arange(len(rewards))
    order = np.lexsort((idx, -rewards.astype(np.float64), labels))
    sorted_labels = labels[order]
    first = np.r_[0, np.flatnonzero(np.diff(sorted_labels)) + 1]
    rank = idx - np.repeat(first, np.diff(np.r_[first, len(order)]))
    expert = np.sort(order[rank < n_e])
    mask = np.zeros(len(rewards), dtype=bool)
    mask[expert] = True
    return ExpertLabeling(expert, np.flatnonzero(~mask), n_e)


@dataclass
class GapReport:
    gaps: np.ndarray
    sizes: np.ndarray

    @property
    def mean(self) -> float:
        """Mean over non-empty clusters."""
        keep = self.sizes > 0
        return float(self.gaps[keep].mean()) if keep.any() else 0.0


def intra_cluster_gap(ds: OfflineDataset | np.ndarray, model: ClusterModel) -> GapReport:
    rewards = (ds.rewards if isinstance(ds, OfflineDataset) else np.asarray(ds)).astype(np.float64)
    labels = model.assignment
    hi = np.full(model.k, -np.inf)
    lo = np.full(model.k, np.inf)
    np.maximum.at(hi, labels, rewards)
    np.minimum.at(lo, labels, rewards)
    sizes = np.bincount(labels, minlength=model.k)
    gaps = np.where(sizes > 0, hi - lo, 0.0)
    return GapReport(gaps, sizes)


def gap_curve(ds: OfflineDataset, k_list, seed: int = 0, max_iter: int = 100,
              restarts: int = 1) -> list[tuple[int, float]]:
    x = standardize(ds.states)
    rows = []
    for k in k_list:
        model = kmeans_fit(x, int(k), max_iter=max_iter, seed=seed, restarts=restarts)
        rows.append((int(k), intra_cluster_gap(ds, model).mean))
    return rows


def write_gap_table(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "mean_gap"])
        for k, g in rows:
            w.writerow([k, repr(float(g))])


def write_labeling(labeling: ExpertLabeling, path, cluster: ClusterModel | None = None):
    doc = {"per_cluster": labeling.per_cluster, "n": labeling.n,
           "expert_idx": labeling.expert_idx.tolist()}
    if cluster is not None:
        doc["k"] = cluster.k
        doc["inertia"] = cluster.inertia
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")


def read_labeling(path) -> ExpertLabeling:
    path = Path(path)
    with open(path) as f:
        doc = json.load(f)
    expert = np.asarray(doc["expert_idx"], dtype=np.int64)
    mask = np.zeros(doc["n"], dtype=bool)
    mask[expert] = True
    return ExpertLabeling(expert, np.flatnonzero(~mask), doc["per_cluster"])

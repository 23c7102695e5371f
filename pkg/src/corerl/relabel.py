"""Compensable-reward relabeling.

Every transition is encoded by the trained CVAE; its reward becomes

    r_adj = r_o - tau * |z - z_expert_centroid|

where the centroid is the mean latent of the expert transitions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .cvae import CvaeModel, encode_batch
from .data import OfflineDataset, reward_histogram
from .experts import ExpertLabeling

_CHUNK = 8192


@dataclass
class RelabelConfig:
    tau: float = 0.3
    use_infer_mode: bool = True
    normalize_dist: bool = False
    noise_seed: int = 0
    hist_bins: int = 50

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")


@dataclass
class CentroidReport:
    centroid: np.ndarray
    n_expert: int
    mean_expert_dist: float
    max_expert_dist: float
    mean_nonexpert_dist: float


@dataclass
class RelabelResult:
    dataset: OfflineDataset
    report: CentroidReport
    distances: np.ndarray
    expert_mask: np.ndarray
    hist_counts: np.ndarray
    hist_edges: np.ndarray

    @property
    def normalized_distances(self) -> np.ndarray:
        top = self.distances.max() if len(self.distances) else 0.0
        return self.distances / top if top > 0 else np.zeros_like(self.distances)


def latent_codes(model: CvaeModel, states, actions, mode: str = "infer",
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Latent ``z`` for every (s, a) row, encoded in chunks."""
    states = np.asarray(states)
    out = np.empty((len(states), model.d_z))
    for lo in range(0, len(states), _CHUNK):
        out[lo:lo + _CHUNK] = encode_batch(model, states[lo:lo + _CHUNK], actions[lo:lo + _CHUNK],
                                           mode, rng).z
    return out


def _dists(z: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    return np.sqrt(((z - centroid) ** 2).sum(axis=1))


def centroid_report(z: np.ndarray, expert_mask: np.ndarray) -> CentroidReport:
    expert_mask = np.asarray(expert_mask, dtype=bool)
    if not expert_mask.any():
        raise ValueError("expert centroid needs at least one expert sample")
    centroid = z[expert_mask].mean(axis=0)
    d = _dists(z, centroid)
    d_e, d_ne = d[expert_mask], d[~expert_mask]
    return CentroidReport(centroid, int(expert_mask.sum()), float(d_e.mean()), float(d_e.max()),
                          float(d_ne.mean()) if len(d_ne) else 0.0)


def expert_centroid(model: CvaeModel, ds: OfflineDataset, labeling: ExpertLabeling) -> CentroidReport:
    if len(labeling.expert_idx) == 0:
        raise ValueError("expert centroid needs at least one expert sample")
    z = latent_codes(model, ds.states, ds.actions)
    return centroid_report(z, labeling.mask())


def latent_distance(model: CvaeModel, state, action: int, centroid) -> float:
    z = encode_batch(model, np.asarray(state)[None, :], [action]).z[0]
    return float(np.linalg.norm(z - np.asarray(centroid)))


def compensable_reward(r_o, dist, tau: float):
    """``r_o - tau * dist``; works elementwise on arrays."""
    if np.any(np.asarray(dist) < 0):
        raise ValueError("distance must be non-negative")
    return r_o - tau * dist


def relabel_dataset(ds: OfflineDataset, model: CvaeModel, labeling: ExpertLabeling,
                    cfg: RelabelConfig | None = None) -> RelabelResult:
    """New dataset with compensable rewards; ``ds`` itself is left untouched."""
    cfg = cfg or RelabelConfig()
    if model.state_dim != ds.meta.state_dim or model.action_count != ds.meta.action_count:
        raise ValueError("CVAE dims do not match the dataset")
    if labeling.n != len(ds):
        raise ValueError(f"labeling covers {labeling.n} transitions, dataset has {len(ds)}")
    if cfg.use_infer_mode:
        z = latent_codes(model, ds.states, ds.actions)
    else:
        z = latent_codes(model, ds.states, ds.actions, "train", np.random.default_rng(cfg.noise_seed))
    mask = labeling.mask()
    report = centroid_report(z, mask)
    dist = _dists(z, report.centroid)
    scaled = dist
    if cfg.normalize_dist and dist.max() > 0:
        scaled = dist / dist.max()
    r_adj = compensable_reward(ds.rewards.astype(np.float64), scaled, cfg.tau)
    counts, edges = reward_histogram(r_adj.astype(np.float32), cfg.hist_bins)
    return RelabelResult(ds.with_rewards(r_adj), report, dist, mask, counts, edges)


def relabel_suffix(tau: float) -> str:
    return f".relabel-tau{tau:g}"


def latent_separation(z: np.ndarray, expert_mask: np.ndarray, max_pairs: int = 200_000,
                      seed: int = 0) -> dict:
    """Summary of how far expert latents sit from non-expert ones.

    ``ratio`` is mean expert-to-non-expert distance over mean expert-to-expert
    distance; ``iqr`` is the inter-quartile range of the max-normalized
    distances to the expert centroid over all samples. Pair means are
    estimated from at most ``max_pairs`` random pairs.
    """
    rng = np.random.default_rng(seed)
    expert_mask = np.asarray(expert_mask, dtype=bool)
    z_e, z_ne = z[expert_mask], z[~expert_mask]
    if len(z_e) < 2 or len(z_ne) < 1:
        raise ValueError("need at least two experts and one non-expert")
    i = rng.integers(len(z_e), size=max_pairs)
    j = rng.integers(len(z_ne), size=max_pairs)
    cross = _dists(z_e[i], z_ne[j]).mean()
    i2 = rng.integers(len(z_e), size=max_pairs)
    i3 = (i2 + rng.integers(1, len(z_e), size=max_pairs)) % len(z_e)
    intra = _dists(z_e[i2], z_e[i3]).mean()
    d = _dists(z, z_e.mean(axis=0))
    nd = d / d.max() if d.max() > 0 else d
    q1, q3 = np.percentile(nd, [25, 75])
    return {"cross": float(cross), "intra": float(intra),
            "ratio": float(cross / intra) if intra > 0 else float("inf"), "iqr": float(q3 - q1)}


def write_distances(result: RelabelResult, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "dist", "normalized_dist", "expert"])
        nd = result.normalized_distances
        for i, (d, n, e) in enumerate(zip(result.distances, nd, result.expert_mask)):
            w.writerow([i, repr(float(d)), repr(float(n)), int(e)])


def write_reward_hist(counts, edges, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])

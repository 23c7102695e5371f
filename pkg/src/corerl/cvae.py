"""Conditional VAE over discrete actions with expert-aware contrastive terms.

The encoder sees ``state ++ Emb(action)`` and outputs ``(mu, log_var)``; the
decoder sees ``z ++ state`` and outputs action logits. The training objective
is

    total = recon + kl + reg + neg

where ``recon`` is softmax cross-entropy on the true action, ``kl`` is the
Gaussian KL to N(0, I), ``reg = lambda_reg * mean_d std_d(z_expert)`` pulls the
expert latents together and ``neg = lambda_neg * E[max(0, margin - |z_e - z_ne|)]``
pushes expert / non-expert pairs at least ``margin`` apart.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import OfflineDataset
from .experts import ExpertLabeling
from .nn import AdamState, DenseNet, adam_step, load_tensors, save_tensors, softmax


@dataclass
class CvaeConfig:
    d_z: int = 8
    d_emb: int = 8
    hidden: int = 128
    n_hidden: int = 2
    batch_norm: bool = False
    dropout: float = 0.0
    lambda_reg: float = 40.0
    lambda_neg: float = 5.0
    margin: float = 0.3
    iters: int = 20000
    batch_size: int = 64
    lr: float = 3e-4
    weight_decay: float = 1e-4
    paper_literal_signs: bool = False
    pairing: str = "aligned"

    def __post_init__(self):
        if self.pairing not in ("aligned", "all"):
            raise ValueError(f"pairing must be 'aligned' or 'all', got {self.pairing!r}")


@dataclass
class LatentCode:
    mu: np.ndarray
    sigma: np.ndarray
    z: np.ndarray


@dataclass
class CvaeLossBreakdown:
    recon: float
    kl: float
    reg: float
    neg: float
    total: float


class CvaeModel:
    def __init__(self, state_dim: int, action_count: int, cfg: CvaeConfig | None = None,
                 rng: np.random.Generator | None = None, state_mean=None, state_std=None):
        cfg = cfg or CvaeConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim, self.action_count, self.cfg = state_dim, action_count, cfg
        self.d_z = cfg.d_z
        self.embedding = rng.normal(0.0, 1.0, size=(action_count, cfg.d_emb))
        hid = [cfg.hidden] * cfg.n_hidden
        self.encoder = DenseNet.mlp([state_dim + cfg.d_emb, *hid, 2 * cfg.d_z], rng,
                                    batch_norm=cfg.batch_norm, dropout=cfg.dropout)
        self.decoder = DenseNet.mlp([cfg.d_z + state_dim, *hid, action_count], rng,
                                    batch_norm=cfg.batch_norm, dropout=cfg.dropout)
        self.state_mean = np.zeros(state_dim) if state_mean is None else np.asarray(state_mean, np.float64)
        self.state_std = np.ones(state_dim) if state_std is None else np.asarray(state_std, np.float64)

    def params(self) -> dict[str, np.ndarray]:
        out = {"emb": self.embedding}
        out.update({f"enc.{k}": v for k, v in self.encoder.params().items()})
        out.update({f"dec.{k}": v for k, v in self.decoder.params().items()})
        return out

    def state(self) -> dict[str, np.ndarray]:
        out = {"emb": self.embedding, "state_mean": self.state_mean, "state_std": self.state_std}
        out.update({f"enc.{k}": v for k, v in self.encoder.state().items()})
        out.update({f"dec.{k}": v for k, v in self.decoder.state().items()})
        return out

    def norm(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != self.state_dim:
            raise ValueError(f"states of shape {s.shape} do not match state_dim={self.state_dim}")
        return (s - self.state_mean) / self.state_std

    def save(self, path):
        save_tensors(path, self.state(), {"kind": "cvae", "state_dim": self.state_dim,
                                          "action_count": self.action_count, "config": asdict(self.cfg)})

    @classmethod
    def load(cls, path) -> "CvaeModel":
        tensors, meta = load_tensors(path)
        if meta.get("kind") != "cvae":
            raise ValueError(f"{path} is not a CVAE checkpoint")
        model = cls(meta["state_dim"], meta["action_count"], CvaeConfig(**meta["config"]))
        model.embedding[...] = tensors["emb"]
        model.state_mean = tensors["state_mean"]
        model.state_std = tensors["state_std"]
        model.encoder.load_state({k[4:]: v for k, v in tensors.items() if k.startswith("enc.")})
        model.decoder.load_state({k[4:]: v for k, v in tensors.items() if k.startswith("dec.")})
        return model


def _check_actions(model: CvaeModel, actions) -> np.ndarray:
    a = np.asarray(actions, dtype=np.int64).reshape(-1)
    if np.any(a < 0) or np.any(a >= model.action_count):
        raise ValueError(f"actions must lie in [0, {model.action_count})")
    return a


def encode_batch(model: CvaeModel, states, actions, mode: str = "infer",
                 rng: np.random.Generator | None = None, eps=None) -> LatentCode:
    """Batched encoder. Infer mode returns ``z = mu``; train mode samples ``mu + sigma * eps``."""
    a = _check_actions(model, actions)
    x = np.concatenate([model.norm(states), model.embedding[a]], axis=1)
    out, _ = model.encoder.forward(x, mode, rng)
    mu, log_var = out[:, :model.d_z], out[:, model.d_z:]
    sigma = np.exp(0.5 * log_var)
    if mode == "infer":
        return LatentCode(mu, sigma, mu.copy())
    if eps is None:
        eps = rng.standard_normal(mu.shape)
    return LatentCode(mu, sigma, mu + sigma * eps)


def encode(model: CvaeModel, state, action: int, rng: np.random.Generator | None = None,
           mode: str = "infer") -> LatentCode:
    code = encode_batch(model, np.asarray(state, dtype=np.float64)[None, :], [action], mode, rng)
    return LatentCode(code.mu[0], code.sigma[0], code.z[0])


def recon_loss_grad(logits, actions) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    a = np.asarray(actions, dtype=np.int64).reshape(-1)
    if len(a) != len(logits):
        raise ValueError(f"{len(logits)} logit rows but {len(a)} actions")
    n = len(a)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -log_p[np.arange(n), a].mean()
    g = np.exp(log_p)
    g[np.arange(n), a] -= 1.0
    return float(loss), g / n


def recon_loss(logits, actions) -> float:
    """Mean softmax cross-entropy of the true actions."""
    return recon_loss_grad(logits, actions)[0]


def kl_loss_grad(mu, log_var) -> tuple[float, np.ndarray, np.ndarray]:
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    n = len(mu)
    var = np.exp(log_var)
    # expm1 keeps var - 1 - log_var from rounding below zero near log_var = 0
    loss = 0.5 * (mu * mu + np.maximum(np.expm1(log_var) - log_var, 0.0)).sum(axis=1).mean()
    return float(loss), mu / n, 0.5 * (var - 1.0) / n


def kl_loss(mu, log_var) -> float:
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over dims, averaged over the batch."""
    return kl_loss_grad(np.atleast_2d(mu), np.atleast_2d(log_var))[0]


def reg_loss_grad(z_e, lambda_reg: float) -> tuple[float, np.ndarray]:
    z_e = np.atleast_2d(np.asarray(z_e, dtype=np.float64))
    n, d = z_e.shape
    if n < 2:
        return 0.0, np.zeros_like(z_e)
    centred = z_e - z_e.mean(axis=0)
    std = np.sqrt((centred * centred).mean(axis=0))
    safe = np.where(std > 0, std, 1.0)
    g = np.where(std > 0, centred / (n * safe), 0.0) * (lambda_reg / d)
    return float(lambda_reg * std.mean()), g


def reg_loss(z_e, lambda_reg: float) -> float:
    """``lambda_reg`` times the mean per-dimension population std of the expert latents."""
    return reg_loss_grad(z_e, lambda_reg)[0]


def _pairs(n_e: int, n_ne: int, pairing: str):
    if pairing == "all":
        ie, ine = np.meshgrid(np.arange(n_e), np.arange(n_ne), indexing="ij")
        return ie.ravel(), ine.ravel()
    n = max(n_e, n_ne)
    return np.arange(n) % n_e, np.arange(n) % n_ne


def neg_loss_grad(z_e, z_ne, lambda_neg: float, margin: float,
                  pairing: str = "aligned") -> tuple[float, np.ndarray, np.ndarray]:
    z_e = np.atleast_2d(np.asarray(z_e, dtype=np.float64))
    z_ne = np.atleast_2d(np.asarray(z_ne, dtype=np.float64))
    if len(z_e) == 0 or len(z_ne) == 0:
        return 0.0, np.zeros_like(z_e), np.zeros_like(z_ne)
    ie, ine = _pairs(len(z_e), len(z_ne), pairing)
    diff = z_e[ie] - z_ne[ine]
    dist = np.sqrt((diff * diff).sum(axis=1))
    # scaling inside the hinge keeps round inputs exact (5 * 0.3 - 5 * 0.1 == 1.0)
    hinge = np.maximum(0.0, lambda_neg * margin - lambda_neg * dist)
    p = len(ie)
    active = (hinge > 0) & (dist > 0)
    coef = np.where(active, -lambda_neg / (p * np.where(dist > 0, dist, 1.0)), 0.0)
    g_pair = coef[:, None] * diff
    g_e = np.zeros_like(z_e)
    g_ne = np.zeros_like(z_ne)
    np.add.at(g_e, ie, g_pair)
    np.add.at(g_ne, ine, -g_pair)
    return float(hinge.mean()), g_e, g_ne


def neg_loss(z_e, z_ne, lambda_neg: float, margin: float, pairing: str = "aligned") -> float:
    """``lambda_neg`` times the mean margin hinge over expert / non-expert pairs.

    ``aligned`` pairs the two batches index-wise, cycling the shorter one;
    ``all`` uses every expert x non-expert pair.
    """
    return neg_loss_grad(z_e, z_ne, lambda_neg, margin, pairing)[0]


def cvae_total_loss(model: CvaeModel, states, actions, expert_mask, cfg: CvaeConfig | None = None,
                    rng: np.random.Generator | None = None, eps=None):
    """Loss breakdown and gradients for every model parameter.

    ``eps`` fixes the reparameterization noise (shape ``(batch, d_z)``); when
    omitted it is drawn from ``rng``. ``rng`` also drives dropout masks.
    """
    cfg = cfg or model.cfg
    a = _check_actions(model, actions)
    s = model.norm(states)
    expert_mask = np.asarray(expert_mask, dtype=bool)
    n, dz = len(a), model.d_z
    if eps is None:
        eps = rng.standard_normal((n, dz))
    sign = -1.0 if cfg.paper_literal_signs else 1.0

    enc_in = np.concatenate([s, model.embedding[a]], axis=1)
    enc_out, enc_cache = model.encoder.forward(enc_in, "train", rng)
    mu, log_var = enc_out[:, :dz], enc_out[:, dz:]
    sigma = np.exp(0.5 * log_var)
    z = mu + sigma * eps
    logits, dec_cache = model.decoder.forward(np.concatenate([z, s], axis=1), "train", rng)

    recon, g_logits = recon_loss_grad(logits, a)
    kl, g_mu, g_lv = kl_loss_grad(mu, log_var)
    reg, g_reg = reg_loss_grad(z[expert_mask], cfg.lambda_reg)
    neg, g_neg_e, g_neg_ne = neg_loss_grad(z[expert_mask], z[~expert_mask], cfg.lambda_neg,
                                           cfg.margin, cfg.pairing)
    reg, neg = sign * reg, sign * neg

    dec_grads, g_dec_in = model.decoder.backward(dec_cache, g_logits)
    g_z = g_dec_in[:, :dz].copy()
    g_z[expert_mask] += sign * (g_reg + g_neg_e)
    g_z[~expert_mask] += sign * g_neg_ne
    g_mu = g_mu + g_z
    g_lv = g_lv + g_z * eps * 0.5 * sigma
    enc_grads, g_enc_in = model.encoder.backward(enc_cache, np.concatenate([g_mu, g_lv], axis=1))
    g_emb = np.zeros_like(model.embedding)
    np.add.at(g_emb, a, g_enc_in[:, model.state_dim:])

    grads = {"emb": g_emb}
    grads.update({f"enc.{k}": v for k, v in enc_grads.items()})
    grads.update({f"dec.{k}": v for k, v in dec_grads.items()})
    total = recon + kl + reg + neg
    return CvaeLossBreakdown(recon, kl, reg, neg, total), grads


HISTORY_COLUMNS = ("iteration", "recon", "kl", "reg", "neg", "total")


def _state_stats(states):
    s = np.asarray(states, dtype=np.float64)
    sd = s.std(axis=0)
    return s.mean(axis=0), np.where(sd > 0, sd, 1.0)


def train_cvae(ds: OfflineDataset, labeling: ExpertLabeling, cfg: CvaeConfig | None = None,
               seed: int = 0, log_every: int = 1):
    """Adam training on expert-stratified batches. Returns ``(model, history)``.

    Each batch holds ``max(1, ceil(batch_size * expert_fraction))`` experts
    drawn with replacement from the expert set; the rest come from the
    non-experts. ``history`` is a list of tuples in HISTORY_COLUMNS order.
    """
    cfg = cfg or CvaeConfig()
    if labeling.n != len(ds):
        raise ValueError(f"labeling covers {labeling.n} transitions, dataset has {len(ds)}")
    if len(labeling.expert_idx) == 0:
        raise ValueError("no expert samples: run expert selection before CVAE training")
    rng = np.random.default_rng(seed)
    mean, std = _state_stats(ds.states)
    model = CvaeModel(ds.meta.state_dim, ds.meta.action_count, cfg, rng, mean, std)
    opt = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    params = model.params()
    exp_idx, non_idx = labeling.expert_idx, labeling.nonexpert_idx
    n_exp = max(1, math.ceil(cfg.batch_size * len(exp_idx) / len(ds)))
    if len(non_idx) == 0:
        n_exp = cfg.batch_size
    n_exp = min(n_exp, cfg.batch_size)
    mask = np.zeros(cfg.batch_size, dtype=bool)
    mask[:n_exp] = True
    history = []
    for it in range(1, cfg.iters + 1):
        idx = np.concatenate([exp_idx[rng.integers(len(exp_idx), size=n_exp)],
                              non_idx[rng.integers(len(non_idx), size=cfg.batch_size - n_exp)]
                              if cfg.batch_size > n_exp else np.empty(0, np.int64)])
        loss, grads = cvae_total_loss(model, ds.states[idx], ds.actions[idx], mask, cfg, rng)
        adam_step(params, grads, opt)
        if it % log_every == 0 or it == 1 or it == cfg.iters:
            history.append((it, loss.recon, loss.kl, loss.reg, loss.neg, loss.total))
    return model, history


def write_history(history, path, columns=HISTORY_COLUMNS):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for row in history:
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])


def decode_probs(model: CvaeModel, z, states) -> np.ndarray:
    logits = model.decoder(np.concatenate([np.atleast_2d(z), model.norm(np.atleast_2d(states))], axis=1))
    return softmax(logits)

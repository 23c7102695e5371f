"""Stage functions for the end-to-end run.

Every stage reads its inputs from, and writes its outputs to, ``cfg.out_dir``,
so any stage can be rerun on its own once the earlier ones have produced
their files. Stage order: gen-data, select-experts, train-cvae, relabel,
train-cql, evaluate. ``analyze-gap`` is a side analysis on the raw dataset.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig
from .cql import CQLConfig, QNetwork, evaluate_policy, train_cql
from .cql import write_history as write_cql_history
from .cvae import CvaeModel, train_cvae
from .cvae import write_history as write_cvae_history
from .data import dataset_paths, read_dataset, write_dataset
from .envs import generate_dataset, make_env, make_policy
from .experts import (gap_curve, kmeans_fit, read_labeling, select_experts, standardize,
                      write_gap_table, write_labeling)
from .relabel import relabel_dataset, relabel_suffix, write_distances, write_reward_hist
from .stats import welch_t_test

VARIANTS = ("core", "baseline")


class MissingInputError(RuntimeError):
    """A stage was started before the stage producing its input."""


class Run:
    """File layout of one run directory."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out_dir)

    def path(self, name: str) -> Path:
        return self.dir / name

    @property
    def dataset(self) -> Path:
        return self.path(self.cfg.dataset.name)

    @property
    def relabeled(self) -> Path:
        return self.path(self.cfg.dataset.name + relabel_suffix(self.cfg.relabel.tau))

    def qnet(self, variant: str, i: int) -> Path:
        return self.path(f"q_{variant}_seed{i}.ckpt.jsonl")

    def require(self, path: Path, stage: str) -> Path:
        probe = dataset_paths(path)[0] if path.suffix == "" or ".relabel-" in path.name else path
        if not probe.exists():
            raise MissingInputError(f"missing input {probe}: run stage {stage!r} first")
        return path


def _env_factory(cfg: PipelineConfig):
    return lambda: make_env(cfg.env.id, **cfg.env.params)


def gen_data(cfg: PipelineConfig) -> list[Path]:
    run = Run(cfg)
    run.dir.mkdir(parents=True, exist_ok=True)
    env = _env_factory(cfg)()
    seed = cfg.dataset.seed if cfg.dataset.seed is not None else cfg.stage_seed("gen-data")
    policy = make_policy(cfg.dataset.policy, cfg.env.id, env.action_count)
    ds = generate_dataset(env, policy, cfg.dataset.size, seed, cfg.dataset.policy)
    return list(write_dataset(ds, run.dataset))


def analyze_gap(cfg: PipelineConfig) -> list[Path]:
    run = Run(cfg)
    ds = read_dataset(run.require(run.dataset, "gen-data"))
    k_list = [k for k in cfg.gap.k_list if k <= len(ds)]
    rows = gap_curve(ds, k_list, seed=cfg.stage_seed("analyze-gap"), max_iter=cfg.kmeans.max_iter,
                     restarts=cfg.kmeans.restarts)
    out = run.path("gap.csv")
    write_gap_table(rows, out)
    return [out]


def select_experts_stage(cfg: PipelineConfig) -> list[Path]:
    run = Run(cfg)
    ds = read_dataset(run.require(run.dataset, "gen-data"))
    model = kmeans_fit(standardize(ds.states), min(cfg.kmeans.k, len(ds)), cfg.kmeans.max_iter,
                       cfg.stage_seed("select-experts"), cfg.kmeans.restarts)
    labeling = select_experts(ds, model, cfg.kmeans.n_expert_per_cluster)
    out = run.path("experts.json")
    write_labeling(labeling, out, model)
    return [out]


def train_cvae_stage(cfg: PipelineConfig) -> list[Path]:
    run = Run(cfg)
    ds = read_dataset(run.require(run.dataset, "gen-data"))
    labeling = read_labeling(run.require(run.path("experts.json"), "select-experts"))
    model, history = train_cvae(ds, labeling, cfg.cvae, cfg.stage_seed("train-cvae"))
    ckpt, hist = run.path("cvae.ckpt.jsonl"), run.path("cvae_history.csv")
    model.save(ckpt)
    write_cvae_history(history, hist)
    return [ckpt, hist]


def relabel_stage(cfg: PipelineConfig) -> list[Path]:
    run = Run(cfg)
    ds = read_dataset(run.require(run.dataset, "gen-data"))
    labeling = read_labeling(run.require(run.path("experts.json"), "select-experts"))
    model = CvaeModel.load(run.require(run.path("cvae.ckpt.jsonl"), "train-cvae"))
    rcfg = cfg.relabel
    if not rcfg.use_infer_mode:
        rcfg = dataclasses.replace(rcfg, noise_seed=cfg.stage_seed(f"relabel/{rcfg.noise_seed}"))
    result = relabel_dataset(ds, model, labeling, rcfg)
    outs = list(write_dataset(result.dataset, run.relabeled))
    write_distances(result, run.path("distances.csv"))
    write_reward_hist(result.hist_counts, result.hist_edges, run.path("reward_hist.csv"))
    rep = result.report
    with open(run.path("centroid.json"), "w") as f:
        json.dump({"centroid": rep.centroid.tolist(), "n_expert": rep.n_expert,
                   "mean_expert_dist": rep.mean_expert_dist, "max_expert_dist": rep.max_expert_dist,
                   "mean_nonexpert_dist": rep.mean_nonexpert_dist, "tau": cfg.relabel.tau}, f, indent=2)
        f.write("\n")
    return outs + [run.path(n) for n in ("distances.csv", "reward_hist.csv", "centroid.json")]


def _cql_config(cfg: PipelineConfig, i: int) -> CQLConfig:
    return dataclasses.replace(cfg.cql, seed=cfg.stage_seed(f"train-cql/{cfg.cql.seed}/{i}"))


def train_cql_stage(cfg: PipelineConfig, variants=VARIANTS) -> list[Path]:
    """One Q-network per evaluation seed and variant.

    ``core`` trains on the relabeled rewards, ``baseline`` on the originals.
    Both variants share the training seed of a given index.
    """
    run = Run(cfg)
    outs = []
    for variant in variants:
        if variant == "core":
            ds = read_dataset(run.require(run.relabeled, "relabel"))
        else:
            ds = read_dataset(run.require(run.dataset, "gen-data"))
        for i in range(cfg.eval.n_seeds):
            qnet, history = train_cql(ds, _cql_config(cfg, i))
            qnet.save(run.qnet(variant, i))
            hist = run.path(f"cql_{variant}_seed{i}_history.csv")
            write_cql_history(history, hist)
            outs += [run.qnet(variant, i), hist]
    return outs


def evaluate_stage(cfg: PipelineConfig, variants=VARIANTS) -> list[Path]:
    """Evaluates every trained variant; writes a comparison table when both exist."""
    run = Run(cfg)
    eval_seed = cfg.stage_seed("evaluate")
    factory = _env_factory(cfg)
    returns = {}
    outs = []
    for variant in variants:
        if not run.qnet(variant, 0).exists():
            continue
        rows = []
        for i in range(cfg.eval.n_seeds):
            qnet = QNetwork.load(run.require(run.qnet(variant, i), "train-cql"))
            # trial j of every training seed replays the same env episodes
            rep = evaluate_policy(qnet, factory, 1, cfg.eval.n_trials, cfg.eval.episode_cap,
                                  seed=eval_seed)
            rows += [(i, j, rep.returns[0, j], int(rep.steps[0, j])) for j in range(cfg.eval.n_trials)]
        returns[variant] = np.array([[r[2] for r in rows if r[0] == i] for i in range(cfg.eval.n_seeds)])
        out = run.path(f"eval_{variant}.csv")
        with open(out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["seed", "trial", "return", "steps"])
            for i, j, ret, n in rows:
                w.writerow([i, j, repr(float(ret)), n])
        outs.append(out)
    if not returns:
        raise MissingInputError(f"no Q-network checkpoints in {run.dir}: run stage 'train-cql' first")
    if all(v in returns for v in VARIANTS):
        outs.append(write_comparison(returns["core"], returns["baseline"], run.path("comparison.csv")))
    return outs


def compare_returns(core: np.ndarray, base: np.ndarray) -> dict:
    t, p = welch_t_test(core.ravel(), base.ravel())
    wins = int((core.mean(axis=1) >= base.mean(axis=1)).sum())
    return {"core_mean": float(core.mean()), "core_std": float(core.std()),
            "baseline_mean": float(base.mean()), "baseline_std": float(base.std()),
            "seeds_core_ge_baseline": wins, "n_seeds": core.shape[0], "welch_t": t, "welch_p": p}


def write_comparison(core: np.ndarray, base: np.ndarray, path: Path) -> Path:
    cmp = compare_returns(core, base)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "value"])
        for k, v in cmp.items():
            w.writerow([k, repr(v) if isinstance(v, float) else v])
        w.writerow([])
        w.writerow(["seed", "core_mean_return", "baseline_mean_return"])
        for i, (c, b) in enumerate(zip(core.mean(axis=1), base.mean(axis=1))):
            w.writerow([i, repr(float(c)), repr(float(b))])
    return path


STAGES = {
    "gen-data": gen_data,
    "analyze-gap": analyze_gap,
    "select-experts": select_experts_stage,
    "train-cvae": train_cvae_stage,
    "relabel": relabel_stage,
    "train-cql": train_cql_stage,
    "evaluate": evaluate_stage,
}
PIPELINE_ORDER = ("gen-data", "select-experts", "train-cvae", "relabel", "train-cql", "evaluate")


def _write_manifest(cfg: PipelineConfig, stage_results: dict):
    run = Run(cfg)
    path = run.path("manifest.json")
    manifest = {}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError:
            manifest = {}
    manifest["tool_version"] = __version__
    manifest["config"] = cfg.to_dict()
    manifest.setdefault("stages", {}).update(stage_results)
    manifest["seeds"] = {
        "global": cfg.seed,
        **{name: cfg.stage_seed(name) for name in ("gen-data", "analyze-gap", "select-experts",
                                                    "train-cvae", "evaluate")},
        **{f"train-cql/{i}": _cql_config(cfg, i).seed for i in range(cfg.eval.n_seeds)},
    }
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def run_stage(name: str, cfg: PipelineConfig, **kwargs) -> list[Path]:
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    outs = STAGES[name](cfg, **kwargs)
    _write_manifest(cfg, {name: {"outputs": sorted(p.name for p in outs),
                                 "seconds": round(time.perf_counter() - start, 3),
                                 "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S")}})
    return outs


def run_pipeline(cfg: PipelineConfig, log=print) -> dict[str, list[Path]]:
    results = {}
    for name in PIPELINE_ORDER:
        start = time.perf_counter()
        results[name] = run_stage(name, cfg)
        log(f"[{name}] {time.perf_counter() - start:.1f}s -> {', '.join(p.name for p in results[name])}")
    return results

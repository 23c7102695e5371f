"""Pipeline configuration: one JSON document with nested sections.

Unknown keys are rejected with a close-match hint, so a typo such as
``cvae.lamda_reg`` fails loudly instead of silently falling back to a default.
"""

from __future__ import annotations

import copy
import difflib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .cql import CQLConfig
from .cvae import CvaeConfig
from .relabel import RelabelConfig


class ConfigError(ValueError):
    pass


@dataclass
class EnvSection:
    id: str = "oran"
    params: dict = field(default_factory=dict)


@dataclass
class DatasetSection:
    policy: str = "round_robin"
    size: int = 50000
    seed: int | None = None
    name: str = "dataset"


@dataclass
class KMeansSection:
    k: int = 1000
    n_expert_per_cluster: int = 1
    restarts: int = 1
    max_iter: int = 100


@dataclass
class GapSection:
    k_list: list = field(default_factory=lambda: [10, 50, 100, 500])


@dataclass
class EvalSection:
    n_seeds: int = 5
    n_trials: int = 5
    episode_cap: int | None = None


SECTIONS = {
    "env": EnvSection,
    "dataset": DatasetSection,
    "kmeans": KMeansSection,
    "gap": GapSection,
    "cvae": CvaeConfig,
    "relabel": RelabelConfig,
    "cql": CQLConfig,
    "eval": EvalSection,
}
TOP_LEVEL = ("seed", "out_dir")


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    env: EnvSection = field(default_factory=EnvSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    kmeans: KMeansSection = field(default_factory=KMeansSection)
    gap: GapSection = field(default_factory=GapSection)
    cvae: CvaeConfig = field(default_factory=CvaeConfig)
    relabel: RelabelConfig = field(default_factory=RelabelConfig)
    cql: CQLConfig = field(default_factory=CQLConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cql"]["hidden"] = list(d["cql"]["hidden"])
        return d

    def stage_seed(self, name: str) -> int:
        """Independent, reproducible seed for a named stage substream."""
        return int(np.random.SeedSequence([self.seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def valid_keys() -> list[str]:
    keys = list(TOP_LEVEL)
    for name, cls in SECTIONS.items():
        keys += [f"{name}.{f.name}" for f in fields(cls)]
    return keys


def _reject(key: str, candidates):
    near = difflib.get_close_matches(key, candidates, n=1, cutoff=0.6)
    hint = f"; did you mean {near[0]!r}?" if near else ""
    raise ConfigError(f"unknown config key {key!r}{hint}\nvalid keys: {', '.join(candidates)}")


def from_dict(raw: dict) -> PipelineConfig:
    raw = copy.deepcopy(raw)
    for key in raw:
        if key not in TOP_LEVEL and key not in SECTIONS:
            _reject(key, list(TOP_LEVEL) + list(SECTIONS))
    kwargs = {k: raw[k] for k in TOP_LEVEL if k in raw}
    for name, cls in SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        names = [f.name for f in fields(cls)]
        for key in section:
            if key not in names:
                _reject(f"{name}.{key}", [f"{name}.{n}" for n in names])
        try:
            kwargs[name] = cls(**section)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid {name!r} section: {e}") from None
    return PipelineConfig(**kwargs)


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, value = text.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key.strip().split("."), parsed


def apply_overrides(raw: dict, overrides) -> dict:
    raw = copy.deepcopy(raw)
    allowed = valid_keys()
    for text in overrides:
        path, value = parse_override(text)
        dotted = ".".join(path)
        # env.params.* is free-form; the env constructor validates it
        if not (dotted in allowed or (len(path) > 2 and path[:2] == ["env", "params"])):
            _reject(dotted, allowed)
        node = raw
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    return raw


def load_config(path, overrides=()) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return from_dict(apply_overrides(raw, overrides))


def bundled_config_path(name: str = "oran_desk.json") -> Path:
    return Path(str(resources.files("corerl") / "configs" / name))

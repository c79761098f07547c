"""Experiment configuration files (YAML, ``version: 1``).

Layout::

    version: 1
    data:
      source: synthetic          # synthetic | csv | movielens | cache
      fields:                    # synthetic only
        - {cardinality: 40, rank: 6, strength: 1.0}
      n_rows: 20000
      seed: 0                    # data generation + split seed
      ratios: [0.8, 0.1, 0.1]
      # csv:       path, label, numeric, threshold, threshold_scope
      # movielens: path (ratings.dat), users, movies
      # cache:     prefix (files written by `hamprune preprocess`)
    model:
      kind: fm                   # fm | deepfm | dcnv2
      dims: null                 # explicit base dims, default min(dim_cap, C_j)
      dim_cap: 16
      options: {}                # e.g. {hidden: [64, 64]} or {cross_layers: 2}
    strategy: ham                # ham | sam | sam-gs | ham-p | uniform
    search: {...}                # any SearchConfig field
    seeds: [0]
    output: runs/
    oracle: {retrain_steps: 50}
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import data as data_mod
from .data import FieldSpec
from .embeddings import base_dims
from .models import MODELS
from .search import ALL_STRATEGIES, SearchConfig

CONFIG_VERSION = 1
SOURCES = ("synthetic", "csv", "movielens", "cache")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    data: dict
    model: dict = field(default_factory=lambda: {"kind": "fm"})
    strategy: str = "ham"
    search: SearchConfig = field(default_factory=SearchConfig)
    seeds: list = field(default_factory=lambda: [0])
    output: str = "runs"
    oracle: dict = field(default_factory=lambda: {"retrain_steps": 50})

    def resolved(self) -> dict:
        """Full configuration with defaults expanded (echoed into reports)."""
        return {"version": CONFIG_VERSION, "data": self.data, "model": self.model, "strategy": self.strategy,
                "search": self.search.to_dict(), "seeds": list(self.seeds), "output": self.output,
                "oracle": self.oracle}


def parse_config(obj: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a mapping")
    if obj.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {obj.get('version')!r}")
    unknown = set(obj) - {"version", "data", "model", "strategy", "search", "seeds", "output", "oracle"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "data" not in obj:
        raise ConfigError("missing 'data' section")
    data = dict(obj["data"])
    source = data.setdefault("source", "synthetic")
    if source not in SOURCES:
        raise ConfigError(f"unknown data source {source!r}")
    data.setdefault("seed", 0)
    data.setdefault("ratios", [0.8, 0.1, 0.1])
    if source == "synthetic":
        if not data.get("fields"):
            raise ConfigError("synthetic data needs a non-empty 'fields' list")
        data.setdefault("n_rows", 10000)
    else:
        key = "prefix" if source == "cache" else "path"
        if key not in data:
            raise ConfigError(f"{source} data needs '{key}'")
        if base_dir is not None and not Path(data[key]).is_absolute():
            data[key] = str(base_dir / data[key])
        if source != "cache" and not Path(data[key]).exists():
            raise ConfigError(f"data path does not exist: {data[key]}")
    if source == "csv":
        data.setdefault("label", "label")
        data.setdefault("numeric", [])
        data.setdefault("threshold", 0)
        data.setdefault("threshold_scope", "full")

    model = {"kind": "fm", "dims": None, "dim_cap": 16, "options": {}}
    model.update(obj.get("model") or {})
    if model["kind"] not in MODELS:
        raise ConfigError(f"unknown model {model['kind']!r}")

    strategy = obj.get("strategy", "ham")
    if strategy not in ALL_STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    search_fields = {f.name for f in dataclasses.fields(SearchConfig)}
    search = dict(obj.get("search") or {})
    bad = set(search) - search_fields
    if bad:
        raise ConfigError(f"unknown search keys: {sorted(bad)}")
    try:
        search_cfg = SearchConfig(**{**search, "strategy": strategy})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    seeds = obj.get("seeds", [search_cfg.seed])
    if isinstance(seeds, int):
        seeds = [seeds]
    oracle = {"retrain_steps": 50}
    oracle.update(obj.get("oracle") or {})
    return ExperimentConfig(data, model, strategy, search_cfg, list(seeds), str(obj.get("output", "runs")), oracle)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        obj = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(obj, path.parent)


def load_data(cfg: ExperimentConfig):
    d = cfg.data
    src = d["source"]
    if src == "synthetic":
        fields = [FieldSpec(**f) if isinstance(f, dict) else FieldSpec(*f) for f in d["fields"]]
        ds = data_mod.synthesize(fields, int(d["n_rows"]), seed=d["seed"], bias=d.get("bias", 0.0))
        return data_mod.split(ds, d["ratios"], d["seed"])
    if src == "csv":
        return data_mod.load_csv(d["path"], d["label"], d["numeric"], d["threshold"], d["threshold_scope"],
                                 d["ratios"], d["seed"])
    if src == "movielens":
        return data_mod.load_movielens(d["path"], d["ratios"], d["seed"], d.get("users"), d.get("movies"))
    return tuple(data_mod.load_cache(f"{d['prefix']}.{tag}.npz") for tag in ("train", "val", "test"))


def model_dims(cfg: ExperimentConfig, cardinalities) -> list[int]:
    if cfg.model.get("dims"):
        return list(cfg.model["dims"])
    return base_dims(cardinalities, cfg.model.get("dim_cap", 16))

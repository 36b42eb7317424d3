"""Experiment configuration: a strict TOML document plus CLI overrides.

Unknown keys are rejected and data paths must resolve at parse time, so a
typo fails fast instead of running the wrong experiment.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .acquisition import ProbCoverConfig
from .data import (
    AssetStore,
    SyntheticSpec,
    TaskSpec,
    load_embeddings,
    load_labels,
    make_synthetic,
    split,
)
from .errors import ConfigError
from .heads import HeadConfig, TrainSettings
from .loop import METHODS, DataBundle, LoopConfig

_SCHEMA = {
    "output": {"dir": None},
    "data": {
        "latent": None,
        "raw": None,
        "labels": None,
        "classes": None,
        "assets": None,
        "synthetic": {
            "classes": None,
            "per_class": None,
            "latent_dim": None,
            "raw_dim": None,
            "noise_scale": None,
            "separation": None,
            "seed": None,
        },
    },
    "split": {"target": None, "validation": None, "test": None, "seed": None},
    "task": {
        "classes_of_interest": None,
        "group_rest_as_other": None,
        "class_names": None,
    },
    "head": {
        "kind": None,
        "trees": None,
        "bootstrap": None,
        "max_features": None,
        "hidden_layers": None,
        "dropout_rate": None,
        "members": None,
        "ensemble_size": None,
        "train": {
            "learning_rate": None,
            "max_steps": None,
            "patience_steps": None,
            "l2_weight": None,
        },
    },
    "loop": {
        "method": None,
        "methods": None,
        "budget": None,
        "init_per_class": None,
        "batch": None,
        "seeds": None,
        "feature_source": None,
        "eval_every": None,
        "members": None,
        "target_per_step": None,
        "probcover_delta": None,
    },
    "decompose": {"n_small": None, "n_large": None, "seeds": None, "members": None},
    "probcover": {
        "purity_target": None,
        "radius_grid": None,
        "kmeans_seed": None,
        "num_classes": None,
    },
    "server": {"seed": None, "bind": None},
}


def _check_keys(section: dict, schema: dict, prefix: str = "") -> None:
    for key, value in section.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {prefix}{key!r}")
        if isinstance(schema[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix}{key!r} must be a table")
            _check_keys(value, schema[key], prefix=f"{prefix}{key}.")


@dataclass
class ExperimentConfig:
    """Validated view of one experiment document."""

    path: Path
    raw: dict
    output_dir: Path
    methods: list[str]
    seeds: list[int]
    loop: LoopConfig
    split_sizes: dict[str, int]
    split_seed: int
    decompose_settings: dict
    probcover: ProbCoverConfig
    probcover_classes: int | None
    server_seed: int
    server_bind: str
    _bundle_cache: DataBundle | None = field(default=None, repr=False)

    def build_bundle(self) -> DataBundle:
        if self._bundle_cache is None:
            self._bundle_cache = _build_bundle(self)
        return self._bundle_cache


def _as_seed_list(value, default_count: int = 20) -> list[int]:
    if value is None:
        return list(range(default_count))
    if isinstance(value, int):
        return list(range(value))
    return [int(s) for s in value]


def _parse_task(section: dict | None) -> TaskSpec | None:
    if not section:
        return None
    names = section.get("class_names")
    return TaskSpec(
        classes_of_interest=tuple(int(c) for c in section["classes_of_interest"]),
        group_rest_as_other=bool(section.get("group_rest_as_other", False)),
        class_names=tuple(names) if names else None,
    )


def _parse_head(section: dict) -> HeadConfig:
    train = section.get("train", {})
    defaults = TrainSettings()
    settings = TrainSettings(
        learning_rate=float(train.get("learning_rate", defaults.learning_rate)),
        max_steps=int(train.get("max_steps", defaults.max_steps)),
        patience_steps=int(train.get("patience_steps", defaults.patience_steps)),
        l2_weight=float(train.get("l2_weight", defaults.l2_weight)),
    )
    base = HeadConfig()
    return HeadConfig(
        kind=section.get("kind", base.kind),
        trees=int(section.get("trees", base.trees)),
        bootstrap=bool(section.get("bootstrap", base.bootstrap)),
        max_features=section.get("max_features", base.max_features),
        hidden_layers=tuple(int(w) for w in section.get("hidden_layers", base.hidden_layers)),
        dropout_rate=float(section.get("dropout_rate", base.dropout_rate)),
        members=int(section.get("members", base.members)),
        ensemble_size=int(section.get("ensemble_size", base.ensemble_size)),
        train=settings,
    )


def _resolve_path(base: Path, value: str, key: str) -> Path:
    path = Path(value)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise ConfigError(f"config key {key}: path {path} does not exist")
    return path


def parse_config(path: str | Path, overrides: list[tuple[str, object]] | None = None,
                 ) -> ExperimentConfig:
    """Load, override, and validate one experiment document."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    for dotted, value in overrides or []:
        _set_dotted(raw, dotted, value)
    _check_keys(raw, _SCHEMA)

    base = path.parent
    data = raw.get("data", {})
    if "synthetic" not in data and "labels" not in data:
        raise ConfigError("config needs [data.synthetic] or data.labels")
    for key in ("latent", "raw", "labels", "assets"):
        if key in data:
            _resolve_path(base, data[key], f"data.{key}")

    loop_sec = raw.get("loop", {})
    if "method" in loop_sec and "methods" in loop_sec:
        raise ConfigError("give loop.method or loop.methods, not both")
    methods = loop_sec.get("methods") or [loop_sec.get("method", "random")]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}, expected one of {METHODS}")
    seeds = _as_seed_list(loop_sec.get("seeds"))

    base_loop = LoopConfig()
    loop = LoopConfig(
        head=_parse_head(raw.get("head", {})),
        method=methods[0],
        budget=int(loop_sec.get("budget", base_loop.budget)),
        init_per_class=int(loop_sec.get("init_per_class", base_loop.init_per_class)),
        batch=int(loop_sec.get("batch", base_loop.batch)),
        seeds=tuple(seeds),
        task=_parse_task(raw.get("task")),
        feature_source=loop_sec.get("feature_source", base_loop.feature_source),
        eval_every=int(loop_sec.get("eval_every", base_loop.eval_every)),
        members=int(loop_sec.get("members", base_loop.members)),
        target_per_step=int(loop_sec.get("target_per_step", base_loop.target_per_step)),
        probcover_delta=loop_sec.get("probcover_delta"),
    )

    split_sec = raw.get("split", {})
    split_sizes = {
        "target": int(split_sec.get("target", 0)),
        "validation": int(split_sec.get("validation", 0)),
        "test": int(split_sec.get("test", 0)),
    }

    dec = raw.get("decompose", {})
    decompose_settings = {
        "n_small": int(dec.get("n_small", 10)),
        "n_large": int(dec.get("n_large", 1000)),
        "seeds": _as_seed_list(dec.get("seeds")),
        "members": int(dec.get("members", 200)),
    }

    pc = raw.get("probcover", {})
    probcover = ProbCoverConfig(
        purity_target=float(pc.get("purity_target", 0.95)),
        radius_grid=tuple(float(g) for g in pc.get("radius_grid", ())),
        kmeans_seed=int(pc.get("kmeans_seed", 0)),
    )

    out = raw.get("output", {}).get("dir") or os.environ.get("EPIGLAB_OUT") or "out"
    server = raw.get("server", {})

    return ExperimentConfig(
        path=path,
        raw=raw,
        output_dir=Path(out),
        methods=list(methods),
        seeds=seeds,
        loop=loop,
        split_sizes=split_sizes,
        split_seed=int(split_sec.get("seed", 0)),
        decompose_settings=decompose_settings,
        probcover=probcover,
        probcover_classes=pc.get("num_classes"),
        server_seed=int(server.get("seed", 0)),
        server_bind=server.get("bind", "127.0.0.1:8000"),
    )


def _set_dotted(raw: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r} crosses a non-table key")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """Parse one `section.key=value` override with TOML value typing."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    dotted, _, literal = text.partition("=")
    dotted = dotted.strip()
    literal = literal.strip()
    try:
        value = tomllib.loads(f"v = {literal}")["v"]
    except tomllib.TOMLDecodeError:
        value = literal
    return dotted, value


def _build_bundle(cfg: ExperimentConfig) -> DataBundle:
    data = cfg.raw.get("data", {})
    base = cfg.path.parent
    if "synthetic" in data:
        s = data["synthetic"]
        spec = SyntheticSpec(
            classes=int(s["classes"]),
            per_class=int(s["per_class"]),
            latent_dim=int(s["latent_dim"]),
            raw_dim=int(s.get("raw_dim", s["latent_dim"])),
            noise_scale=float(s.get("noise_scale", 1.0)),
            separation=float(s.get("separation", 6.0)),
        )
        latent, raw_table, oracle = make_synthetic(spec, int(s.get("seed", 0)))
        tables = {"latent": latent, "raw": raw_table}
    else:
        tables = {}
        for key in ("latent", "raw"):
            if key in data:
                tables[key] = load_embeddings(_resolve_path(base, data[key], key))
        if not tables:
            raise ConfigError("file-based config needs data.latent and/or data.raw")
        oracle = load_labels(_resolve_path(base, data["labels"], "labels"),
                             classes=data.get("classes"))

    n = oracle.n
    splits = split(n, cfg.split_sizes, oracle, cfg.split_seed)
    assets = None
    if "assets" in data:
        assets = AssetStore(_resolve_path(base, data["assets"], "assets"))
    return DataBundle(tables=tables, oracle=oracle, splits=splits, assets=assets)

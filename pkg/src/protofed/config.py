"""Experiment configuration: YAML schema, defaults, validation, presets.

A config file is one YAML mapping; every field is optional and falls back to
the defaults below (an empty file means "all defaults"). Unknown keys are
rejected by name. ``--set a.b.c=value`` overrides use the same dotted paths
as the schema. ``serialize_config`` emits a canonical form whose parse/dump
cycle is idempotent.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from .datagen import DomainSpec, PartitionSpec
from .losses import LossConfig
from .prototypes import PrivacyConfig

_DEFAULTS: dict = {
    "seeds": [0, 1, 2, 3, 4],
    "rounds": 30,
    "local_epochs": 2,
    "batch_size": 32,
    "parallelism": 1,
    "participation_fraction": 1.0,
    "model": {
        "input_dim": 16,
        "hidden_dims": [32],
        "feature_dim": 16,
    },
    "optimizer": {
        "learning_rate": 0.01,
        "momentum": 0.5,
        "weight_decay": 1.0e-5,
    },
    "loss": {
        "temperature": 0.07,
        "sparsity": 0.25,
        "proto_weight": 100.0,
        "contrast_term": True,
        "correction_term": True,
    },
    "prototypes": {
        "local_mode": "cluster",
        "global_mode": "cluster",
        "broadcast_locals": False,
        "weight_global_average_by_members": False,
        "clustering": "finch",
        "kmeans_k": 2,
    },
    "privacy": {
        "enabled": False,
        "noise_scale": 0.05,
        "perturb_prob": 0.1,
        "dp_sgd": False,
    },
    "data": {
        "num_classes": 5,
        "partition": "iid",
        "dirichlet_alpha": 0.5,
        "domains": [
            {"name": "easy", "sigma": 0.1, "transform_seed": 101, "n_train": 100, "n_test": 500, "clients": 1},
            {"name": "mid_a", "sigma": 0.3, "transform_seed": 102, "n_train": 100, "n_test": 500, "clients": 1},
            {"name": "mid_b", "sigma": 0.5, "transform_seed": 103, "n_train": 100, "n_test": 500, "clients": 1},
            {"name": "hard", "sigma": 0.8, "transform_seed": 104, "n_train": 100, "n_test": 500, "clients": 1},
        ],
    },
}

_DOMAIN_DEFAULTS = {"sigma": 0.5, "transform_seed": 0, "n_train": 100, "n_test": 500, "clients": 1}


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.5
    weight_decay: float = 1.0e-5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple[int, ...]
    rounds: int
    local_epochs: int
    batch_size: int
    parallelism: int
    participation_fraction: float
    input_dim: int
    hidden_dims: tuple[int, ...]
    feature_dim: int
    num_classes: int
    optimizer: OptimizerConfig
    loss: LossConfig
    local_mode: str
    global_mode: str
    broadcast_locals: bool
    weight_global_average_by_members: bool
    clustering: str
    kmeans_k: int
    privacy: PrivacyConfig
    partition: PartitionSpec
    domains: tuple[DomainSpec, ...]

    def num_clients(self) -> int:
        return sum(d.clients for d in self.domains)

    def domain_names(self) -> list[str]:
        return [d.name for d in self.domains]


class ConfigError(ValueError):
    pass


def _merge(base: dict, user: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in user.items():
        here = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here} must be a mapping")
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = value
    return out


def _need(value, types, key, desc):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{key} must be {desc}, got {value!r}")
    if not isinstance(value, types):
        raise ConfigError(f"{key} must be {desc}, got {value!r}")
    return value


def _int(raw, key, minimum=None):
    v = _need(raw, int, key, "an integer")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {v}")
    return int(v)


def _float(raw, key):
    v = _need(raw, (int, float), key, "a number")
    return float(v)


def _bool(raw, key):
    return bool(_need(raw, bool, key, "a boolean"))


def _str(raw, key, choices=None):
    v = _need(raw, str, key, "a string")
    if choices and v not in choices:
        raise ConfigError(f"{key} must be one of {sorted(choices)}, got {v!r}")
    return v


def _build(tree: dict) -> ExperimentConfig:
    seeds = tree["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")

    model = tree["model"]
    hidden = model["hidden_dims"]
    if not isinstance(hidden, list) or not all(isinstance(h, int) and h >= 1 for h in hidden):
        raise ConfigError("model.hidden_dims must be a list of positive integers")

    try:
        opt = OptimizerConfig(
            learning_rate=_float(tree["optimizer"]["learning_rate"], "optimizer.learning_rate"),
            momentum=_float(tree["optimizer"]["momentum"], "optimizer.momentum"),
            weight_decay=_float(tree["optimizer"]["weight_decay"], "optimizer.weight_decay"),
        )
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from exc

    loss_raw = tree["loss"]
    try:
        loss = LossConfig(
            temperature=_float(loss_raw["temperature"], "loss.temperature"),
            sparsity=_float(loss_raw["sparsity"], "loss.sparsity"),
            proto_weight=_float(loss_raw["proto_weight"], "loss.proto_weight"),
            contrast_term=_bool(loss_raw["contrast_term"], "loss.contrast_term"),
            correction_term=_bool(loss_raw["correction_term"], "loss.correction_term"),
        )
    except ValueError as exc:
        raise ConfigError(f"loss: {exc}") from exc

    proto = tree["prototypes"]
    local_mode = _str(proto["local_mode"], "prototypes.local_mode", {"average", "cluster"})
    global_mode = _str(proto["global_mode"], "prototypes.global_mode", {"average", "cluster"})
    clustering = _str(
        proto["clustering"], "prototypes.clustering", {"finch", "kmeans", "kmeans_adaptive"}
    )

    priv_raw = tree["privacy"]
    try:
        privacy = PrivacyConfig(
            enabled=_bool(priv_raw["enabled"], "privacy.enabled"),
            noise_scale=_float(priv_raw["noise_scale"], "privacy.noise_scale"),
            perturb_prob=_float(priv_raw["perturb_prob"], "privacy.perturb_prob"),
            dp_sgd=_bool(priv_raw["dp_sgd"], "privacy.dp_sgd"),
        )
    except ValueError as exc:
        raise ConfigError(f"privacy: {exc}") from exc

    data = tree["data"]
    try:
        partition = PartitionSpec(
            kind=_str(data["partition"], "data.partition", {"iid", "dirichlet"}),
            dirichlet_alpha=_float(data["dirichlet_alpha"], "data.dirichlet_alpha"),
        )
    except ValueError as exc:
        raise ConfigError(f"data: {exc}") from exc

    raw_domains = data["domains"]
    if not isinstance(raw_domains, list) or not raw_domains:
        raise ConfigError("data.domains must be a non-empty list")
    domains = []
    for i, entry in enumerate(raw_domains):
        if not isinstance(entry, dict):
            raise ConfigError(f"data.domains[{i}] must be a mapping")
        if "name" not in entry:
            raise ConfigError(f"data.domains[{i}].name is required")
        unknown = set(entry) - ({"name"} | set(_DOMAIN_DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config key: data.domains[{i}].{sorted(unknown)[0]}")
        merged = {**_DOMAIN_DEFAULTS, **entry}
        try:
            domains.append(
                DomainSpec(
                    domain_id=i,
                    name=_str(merged["name"], f"data.domains[{i}].name"),
                    sigma=_float(merged["sigma"], f"data.domains[{i}].sigma"),
                    transform_seed=_int(merged["transform_seed"], f"data.domains[{i}].transform_seed"),
                    n_train=_int(merged["n_train"], f"data.domains[{i}].n_train", 1),
                    n_test=_int(merged["n_test"], f"data.domains[{i}].n_test", 1),
                    clients=_int(merged["clients"], f"data.domains[{i}].clients", 1),
                )
            )
        except ValueError as exc:
            raise ConfigError(f"data.domains[{i}]: {exc}") from exc
    names = [d.name for d in domains]
    if len(set(names)) != len(names):
        raise ConfigError("domain names must be unique")

    frac = _float(tree["participation_fraction"], "participation_fraction")
    if not 0.0 < frac <= 1.0:
        raise ConfigError("participation_fraction must be in (0, 1]")

    return ExperimentConfig(
        seeds=tuple(int(s) for s in seeds),
        rounds=_int(tree["rounds"], "rounds", 0),
        local_epochs=_int(tree["local_epochs"], "local_epochs", 1),
        batch_size=_int(tree["batch_size"], "batch_size", 1),
        parallelism=_int(tree["parallelism"], "parallelism", 1),
        participation_fraction=frac,
        input_dim=_int(model["input_dim"], "model.input_dim", 1),
        hidden_dims=tuple(hidden),
        feature_dim=_int(model["feature_dim"], "model.feature_dim", 1),
        num_classes=_int(data["num_classes"], "data.num_classes", 2),
        optimizer=opt,
        loss=loss,
        local_mode=local_mode,
        global_mode=global_mode,
        broadcast_locals=_bool(proto["broadcast_locals"], "prototypes.broadcast_locals"),
        weight_global_average_by_members=_bool(
            proto["weight_global_average_by_members"],
            "prototypes.weight_global_average_by_members",
        ),
        clustering=clustering,
        kmeans_k=_int(proto["kmeans_k"], "prototypes.kmeans_k", 1),
        privacy=privacy,
        partition=partition,
        domains=tuple(domains),
    )


def config_from_dict(user: dict | None, overrides: tuple[str, ...] = ()) -> ExperimentConfig:
    tree = _merge(_DEFAULTS, user or {}, "")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, _, raw = item.partition("=")
        value = yaml.safe_load(raw) if raw != "" else None
        node = tree
        parts = dotted.strip().split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key: {dotted}")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown config key: {dotted}")
        node[parts[-1]] = value
    return _build(tree)


def parse_config(path, overrides: tuple[str, ...] = ()) -> ExperimentConfig:
    """Load and validate a YAML config file; empty file means all defaults."""
    text = Path(path).read_text()
    user = yaml.safe_load(text)
    if user is None:
        user = {}
    if not isinstance(user, dict):
        raise ConfigError("config file must contain a YAML mapping")
    return config_from_dict(user, overrides)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "seeds": list(cfg.seeds),
        "rounds": cfg.rounds,
        "local_epochs": cfg.local_epochs,
        "batch_size": cfg.batch_size,
        "parallelism": cfg.parallelism,
        "participation_fraction": cfg.participation_fraction,
        "model": {
            "input_dim": cfg.input_dim,
            "hidden_dims": list(cfg.hidden_dims),
            "feature_dim": cfg.feature_dim,
        },
        "optimizer": {
            "learning_rate": cfg.optimizer.learning_rate,
            "momentum": cfg.optimizer.momentum,
            "weight_decay": cfg.optimizer.weight_decay,
        },
        "loss": {
            "temperature": cfg.loss.temperature,
            "sparsity": cfg.loss.sparsity,
            "proto_weight": cfg.loss.proto_weight,
            "contrast_term": cfg.loss.contrast_term,
            "correction_term": cfg.loss.correction_term,
        },
        "prototypes": {
            "local_mode": cfg.local_mode,
            "global_mode": cfg.global_mode,
            "broadcast_locals": cfg.broadcast_locals,
            "weight_global_average_by_members": cfg.weight_global_average_by_members,
            "clustering": cfg.clustering,
            "kmeans_k": cfg.kmeans_k,
        },
        "privacy": {
            "enabled": cfg.privacy.enabled,
            "noise_scale": cfg.privacy.noise_scale,
            "perturb_prob": cfg.privacy.perturb_prob,
            "dp_sgd": cfg.privacy.dp_sgd,
        },
        "data": {
            "num_classes": cfg.num_classes,
            "partition": cfg.partition.kind,
            "dirichlet_alpha": cfg.partition.dirichlet_alpha,
            "domains": [
                {
                    "name": d.name,
                    "sigma": d.sigma,
                    "transform_seed": d.transform_seed,
                    "n_train": d.n_train,
                    "n_test": d.n_test,
                    "clients": d.clients,
                }
                for d in cfg.domains
            ],
        },
    }


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=False)


# ---------------------------------------------------------------------------
# Presets: named experiment batteries mirroring the published ablations
# ---------------------------------------------------------------------------

def _variant(patch: dict, overrides: tuple[str, ...] = ()) -> ExperimentConfig:
    return config_from_dict(copy.deepcopy(patch), overrides)


def preset_variants(name: str) -> list[tuple[str, ExperimentConfig]]:
    """Return (variant_name, config) pairs for a named preset battery."""
    if name == "table3":
        combos = [("average", "average"), ("average", "cluster"), ("cluster", "average"), ("cluster", "cluster")]
        return [
            (
                f"local_{lm}__global_{gm}",
                _variant({"prototypes": {"local_mode": lm, "global_mode": gm}}),
            )
            for lm, gm in combos
        ]
    if name == "table4":
        return [
            ("global_clustering", _variant({})),
            ("broadcast_locals", _variant({"prototypes": {"broadcast_locals": True}})),
        ]
    if name == "table5":
        combos = [("none", False, False), ("contrast_only", True, False), ("correction_only", False, True), ("both", True, True)]
        return [
            (
                label,
                _variant({"loss": {"contrast_term": c, "correction_term": r}}),
            )
            for label, c, r in combos
        ]
    if name == "fig4":
        return [
            (f"alpha_{a}", _variant({"loss": {"sparsity": a}}))
            for a in (0.125, 0.25, 0.5, 0.75, 1.0)
        ]
    if name == "fig5":
        return [
            (f"tau_{t}", _variant({"loss": {"temperature": t}}))
            for t in (0.02, 0.045, 0.07, 0.1, 0.2)
        ]
    if name == "appendixC":
        domains = copy.deepcopy(_DEFAULTS["data"]["domains"])
        for d in domains:
            d["clients"] = 2
        return [
            (
                "dirichlet_0.5",
                _variant({"data": {"partition": "dirichlet", "dirichlet_alpha": 0.5, "domains": domains}}),
            )
        ]
    if name == "appendixE":
        domains = [
            {"name": "easy", "sigma": 0.1, "transform_seed": 201, "clients": 1},
            {"name": "hard", "sigma": 0.8, "transform_seed": 202, "clients": 4},
            {"name": "mid_a", "sigma": 0.2, "transform_seed": 203, "clients": 2},
            {"name": "mid_b", "sigma": 0.5, "transform_seed": 204, "clients": 2},
            {"name": "mid_c", "sigma": 0.4, "transform_seed": 205, "clients": 1},
        ]
        return [("unbalanced_clients", _variant({"data": {"domains": domains}}))]
    if name == "appendixF":
        return [
            ("no_privacy", _variant({})),
            ("prototype_privacy", _variant({"privacy": {"enabled": True}})),
        ]
    raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")


PRESET_NAMES = ("table3", "table4", "table5", "fig4", "fig5", "appendixC", "appendixE", "appendixF")

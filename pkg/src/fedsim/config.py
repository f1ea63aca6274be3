"""Declarative experiment configuration.

Configs are YAML mappings with fixed sections (model, algo, data, fed, opt)
plus top-level `seeds` and `out_dir`. Unknown keys are rejected by name;
omitted keys default to the reference protocol values (lr 0.01, momentum 0.9,
weight decay 1e-5, E=10, mu=0.5, lambda=D/4, mu_prox=0.01, epsilon=1e-4).

Stream tags used to derive every random choice from one run seed:
    1 synthetic data, 2 train/val split, 3 partition, 4 test set,
    5 model init, 6 participation, 7 local batches (rounds/clients nested).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import (
    Dataset,
    ShiftSpec,
    SyntheticTaskSpec,
    class_centers,
    client_datasets,
    dirichlet_partition,
    feature_shift_partition,
    generate_synthetic,
    load_idx,
    train_val_split,
)
from .federation import Algorithm, FederationConfig
from .model import ModelSpec
from .rng import RngStream

TAG_DATA = 1
TAG_SPLIT = 2
TAG_PART = 3
TAG_TEST = 4


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2 at the CLI)."""


_SCHEMA = {
    "model": {
        "d_in": (int, None),
        "encoder": (list, [64]),
        "projector": (int, 32),
        "feature_dim": (int, 16),
        "classes": (int, None),
        "normalization": (str, "batch"),
    },
    "algo": {
        "kind": (str, None),
        "mu": (float, 0.5),
        "lambda": (float, None),   # resolved to classes / 4
        "mu_prox": (float, 0.01),
        "epsilon": (float, 1e-4),
        "he_features": (str, "post_projector"),
    },
    "data": {
        "kind": (str, "synthetic"),
        "per_class": (int, 200),
        "center_scale": (float, 1.0),
        "noise_sigma": (float, 0.5),
        "confusability": (float, 0.0),
        "test_per_class": (int, None),  # defaults to per_class
        "val_fraction": (float, 0.1),
        "partition": (str, "dirichlet"),
        "alpha": (float, 1.0),
        "rotations": (int, 8),
        "rotation_strength": (float, 1.0),
        "bias_scale": (float, 0.5),
        "noise_scale": (float, 0.0),
        "images": (str, ""),
        "labels": (str, ""),
        "test_images": (str, ""),
        "test_labels": (str, ""),
    },
    "fed": {
        "clients": (int, None),
        "rounds": (int, 100),
        "local_epochs": (int, 10),
        "rho": (float, 1.0),
        "batch_size": (int, 64),
        "weighting": (str, "by_sample_count"),
        "spectrum_per_round": (bool, False),
    },
    "opt": {
        "lr": (float, 0.01),
        "momentum": (float, 0.9),
        "weight_decay": (float, 1e-5),
    },
}

_REQUIRED = {"model": ("d_in", "classes"), "algo": ("kind",), "fed": ("clients",)}


@dataclass
class ExperimentConfig:
    """Fully resolved run description; `raw` is the expanded key/value map."""

    model: ModelSpec
    algorithm: Algorithm
    fed: FederationConfig  # seed field is a placeholder; per-seed copies made at run time
    seeds: list[int]
    out_dir: str
    data: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def digest(self) -> str:
        return config_digest(self.raw)

    def fed_for_seed(self, seed: int, threads: int = 1) -> FederationConfig:
        d = self.fed.__dict__ | {"seed": seed, "threads": threads}
        return FederationConfig(**d)


def config_digest(resolved: dict) -> str:
    return hashlib.sha256(
        json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def _coerce(section: str, key: str, expected, value):
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if expected is list:
        if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
            raise ConfigError(f"{section}.{key}: expected a list of integers")
        return list(value)
    if not isinstance(value, expected) or (expected in (int, float) and isinstance(value, bool)):
        raise ConfigError(
            f"{section}.{key}: expected {expected.__name__}, got {type(value).__name__}")
    return value


def _resolve_sections(doc: dict) -> dict:
    known_top = set(_SCHEMA) | {"seeds", "out_dir"}
    for key in doc:
        if key not in known_top:
            raise ConfigError(f"unknown key {key!r}")
    resolved: dict = {}
    for section, fields in _SCHEMA.items():
        given = doc.get(section, {})
        if given is None:
            given = {}
        if not isinstance(given, dict):
            raise ConfigError(f"{section}: expected a mapping")
        for key in given:
            if key not in fields:
                raise ConfigError(f"unknown key '{section}.{key}'")
        out = {}
        for key, (expected, default) in fields.items():
            if key in given:
                out[key] = _coerce(section, key, expected, given[key])
            else:
                out[key] = default
        for key in _REQUIRED.get(section, ()):
            if out[key] is None:
                raise ConfigError(f"missing required key {section}.{key}")
        resolved[section] = out
    if "seeds" not in doc:
        raise ConfigError("missing required key seeds")
    seeds = doc["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(
            isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("seeds: expected a non-empty list of integers")
    resolved["seeds"] = list(seeds)
    resolved["out_dir"] = doc.get("out_dir", "")
    if not isinstance(resolved["out_dir"], str):
        raise ConfigError("out_dir: expected a string")
    return resolved


def _validate(resolved: dict) -> None:
    fed = resolved["fed"]
    if not 0.0 < fed["rho"] <= 1.0:
        raise ConfigError("fed.rho: participation out of range (0, 1]")
    if fed["clients"] < 1 or fed["rounds"] < 0 or fed["local_epochs"] < 1:
        raise ConfigError("fed: clients/local_epochs must be >= 1 and rounds >= 0")
    if fed["batch_size"] < 2:
        raise ConfigError("fed.batch_size: must be >= 2")
    if fed["weighting"] not in ("by_sample_count", "uniform"):
        raise ConfigError(f"fed.weighting: unknown value {fed['weighting']!r}")
    algo = resolved["algo"]
    if algo["kind"] not in ("fedavg", "fedprox", "freeze", "univarfl"):
        raise ConfigError(f"algo.kind: unknown algorithm {algo['kind']!r}")
    if algo["he_features"] not in ("post_projector", "pre_projector"):
        raise ConfigError(f"algo.he_features: unknown value {algo['he_features']!r}")
    for key in ("mu", "lambda", "mu_prox", "epsilon"):
        if algo[key] is not None and algo[key] < 0:
            raise ConfigError(f"algo.{key}: must be >= 0")
    data = resolved["data"]
    if data["kind"] not in ("synthetic", "idx"):
        raise ConfigError(f"data.kind: unknown value {data['kind']!r}")
    if data["partition"] not in ("dirichlet", "feature_shift"):
        raise ConfigError(f"data.partition: unknown value {data['partition']!r}")
    if data["alpha"] <= 0:
        raise ConfigError("data.alpha: must be positive")
    if not 0.0 < data["val_fraction"] < 1.0:
        raise ConfigError("data.val_fraction: must be in (0, 1)")
    if data["kind"] == "idx":
        for key in ("images", "labels"):
            if not data[key]:
                raise ConfigError(f"missing required key data.{key} for idx data")
            if not os.path.exists(data[key]):
                raise ConfigError(f"data.{key}: path does not exist: {data[key]}")
        for key in ("test_images", "test_labels"):
            if data[key] and not os.path.exists(data[key]):
                raise ConfigError(f"data.{key}: path does not exist: {data[key]}")
    model = resolved["model"]
    if model["normalization"] not in ("batch", "none"):
        raise ConfigError(f"model.normalization: unknown value {model['normalization']!r}")


def parse_config(source: str | Path) -> ExperimentConfig:
    """Parse a config from a file path or inline YAML text."""
    text = None
    if isinstance(source, Path) or (isinstance(source, str) and os.path.exists(source)):
        text = Path(source).read_text(encoding="utf-8")
    elif isinstance(source, str):
        text = source
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config does not parse as YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config source is neither an existing file nor an inline mapping")

    resolved = _resolve_sections(doc)
    if resolved["data"]["test_per_class"] is None:
        resolved["data"]["test_per_class"] = resolved["data"]["per_class"]
    if resolved["algo"]["lambda"] is None:
        resolved["algo"]["lambda"] = resolved["model"]["classes"] / 4.0
    _validate(resolved)

    m = resolved["model"]
    a = resolved["algo"]
    model = ModelSpec(
        input_dim=m["d_in"],
        encoder=tuple(m["encoder"]),
        projector=m["projector"],
        feature_dim=m["feature_dim"],
        classes=m["classes"],
        normalization=m["normalization"],
        classifier_frozen=a["kind"] == "freeze",
    )
    algorithm = _algorithm_from(a)
    f = resolved["fed"]
    fed = FederationConfig(
        clients=f["clients"], rounds=f["rounds"], local_epochs=f["local_epochs"],
        rho=f["rho"], batch_size=f["batch_size"], weighting=f["weighting"],
        lr=resolved["opt"]["lr"], momentum=resolved["opt"]["momentum"],
        weight_decay=resolved["opt"]["weight_decay"], seed=0, threads=1,
    )
    return ExperimentConfig(
        model=model, algorithm=algorithm, fed=fed, seeds=resolved["seeds"],
        out_dir=resolved["out_dir"], data=resolved["data"], raw=resolved,
    )


def _algorithm_from(a: dict) -> Algorithm:
    kind = a["kind"]
    if kind == "fedavg" or kind == "freeze":
        return Algorithm(kind)
    if kind == "fedprox":
        return Algorithm(kind, mu_prox=a["mu_prox"])
    return Algorithm(
        kind, mu=a["mu"], lam=a["lambda"], he_eps=a["epsilon"], he_features=a["he_features"])


@dataclass
class ExperimentData:
    clients: list[Dataset]
    test: Dataset
    val: Dataset
    train: Dataset
    histograms: object


def build_experiment_data(cfg: ExperimentConfig, seed: int) -> ExperimentData:
    """Materialize datasets and the client partition for one seed."""
    root = RngStream(seed)
    d = cfg.data
    if d["kind"] == "synthetic":
        task = SyntheticTaskSpec(
            classes=cfg.model.classes, input_dim=cfg.model.input_dim,
            per_class=d["per_class"], center_scale=d["center_scale"],
            noise_sigma=d["noise_sigma"], confusability=d["confusability"],
        )
        full = generate_synthetic(task, root.derive(TAG_DATA))
        test_task = SyntheticTaskSpec(
            classes=cfg.model.classes, input_dim=cfg.model.input_dim,
            per_class=d["test_per_class"], center_scale=d["center_scale"],
            noise_sigma=d["noise_sigma"], confusability=d["confusability"],
        )
        # the held-out set is fresh draws from the SAME task: shared centers
        centers = class_centers(task, root.derive(TAG_DATA).derive(0))
        test = generate_synthetic(test_task, root.derive(TAG_TEST), centers=centers)
    else:
        full = load_idx(d["images"], d["labels"])
        if full.classes != cfg.model.classes:
            raise ConfigError(
                f"model.classes={cfg.model.classes} but idx data has {full.classes} classes")
        test = (
            load_idx(d["test_images"], d["test_labels"])
            if d["test_images"] and d["test_labels"] else None
        )
    train, val = train_val_split(full, 1.0 - d["val_fraction"], root.derive(TAG_SPLIT))
    if test is None:
        test = val
    if d["partition"] == "dirichlet":
        part = dirichlet_partition(train, cfg.fed.clients, d["alpha"], root.derive(TAG_PART))
        clients = client_datasets(train, part)
    else:
        shift = ShiftSpec(
            rotations=d["rotations"], rotation_strength=d["rotation_strength"],
            bias_scale=d["bias_scale"], noise_scale=d["noise_scale"],
        )
        part, clients = feature_shift_partition(
            train, cfg.fed.clients, shift, root.derive(TAG_PART))
    return ExperimentData(
        clients=clients, test=test, val=val, train=train, histograms=part.histograms)

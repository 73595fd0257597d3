"""Run configuration: one YAML tree, dotted-key overrides, exact echo.

A run is fully determined by its echo: `dump_config(load_config(echo))`
is byte-stable, and rerunning from an echo reproduces checkpoints and
metrics bit-exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .attacks import AttackConfig
from .data import AugmentPolicy
from .encoder import EncoderConfig
from .errors import ConfigError
from .losses import LossConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    dataset: str = "synthetic"  # synthetic | cifar10
    data_dir: Optional[str] = None  # cifar10 root; CLAE_DATA_DIR if unset
    subset: Optional[int] = None    # first N records per split
    # synthetic generator knobs
    classes: int = 10
    per_class: int = 500
    test_per_class: int = 100
    image_size: int = 16
    noise: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    encoder: EncoderConfig = EncoderConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()


def _build(cls, tree: dict, path: str):
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(tree).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(tree) - set(known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in tree:
            continue
        value = tree[name]
        sub = _NESTED.get((cls, name))
        if sub is not None:
            if value is None and name == "attack":
                kwargs[name] = None
            else:
                kwargs[name] = _build(sub, value, f"{path}.{name}")
        elif f.type in ("tuple[int, ...]",) or name == "hidden_dims":
            kwargs[name] = tuple(int(v) for v in (value or ()))
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from e


_NESTED = {
    (RunConfig, "encoder"): EncoderConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "data"): DataConfig,
    (TrainConfig, "attack"): AttackConfig,
    (TrainConfig, "loss"): LossConfig,
    (TrainConfig, "augment"): AugmentPolicy,
}


def config_to_dict(cfg: RunConfig) -> dict:
    def convert(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name))
                    for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        return obj

    return convert(cfg)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True,
                          default_flow_style=False)


def config_from_dict(tree: dict) -> RunConfig:
    cfg = _build(RunConfig, tree, "config")
    try:
        cfg.train.validate()
        cfg.encoder.validate()
    except Exception as e:
        raise ConfigError(str(e)) from e
    return cfg


def load_config(text: str) -> RunConfig:
    try:
        tree = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML: {e}") from e
    return config_from_dict(tree)


def load_config_file(path) -> RunConfig:
    return load_config(Path(path).read_text(encoding="utf-8"))


def apply_overrides(cfg: RunConfig, overrides: dict[str, object]) -> RunConfig:
    """Apply dotted-key overrides, e.g. {"train.alpha": 0.5}."""
    tree = config_to_dict(cfg)
    for dotted, value in overrides.items():
        node = tree
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                if part == "attack" and node.get(part) is None:
                    node[part] = config_to_dict(RunConfig()).get("train", {}).get("attack")
                else:
                    raise ConfigError(f"override {dotted!r}: no section {part!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"override {dotted!r}: unknown field {parts[-1]!r}")
        node[parts[-1]] = value
    return config_from_dict(tree)


def run_id(cfg: RunConfig) -> str:
    """Stable identity of a run: every knob except where outputs land."""
    tree = config_to_dict(cfg)
    tree.pop("out_dir", None)
    digest = hashlib.sha256()
    digest.update(yaml.safe_dump(tree, sort_keys=True).encode())
    digest.update(str(cfg.seed).encode())
    return digest.hexdigest()[:16]


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Propagate the run seed into the training config."""
    train = dataclasses.replace(cfg.train, seed=int(seed))
    return dataclasses.replace(cfg, seed=int(seed), train=train)

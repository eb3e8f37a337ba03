"""Flat dotted-key run configuration (``model.*``, ``train.*``, ``loss.*``, ``data.*``, ``eval.*``).

Precedence is defaults < config file < command-line overrides. Unknown keys
are errors, never silently ignored.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .losses import LossWeights
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class DataConfig:
    root: str = ""
    load_size: int = 0  # 0 means "same as model.image_size"
    random_crop: bool = False
    horizontal_flip: bool = False


@dataclasses.dataclass
class EvalConfig:
    split: str = "test"
    n_content: int = 100
    n_styles: int = 10
    repeats: int = 10
    n_pairs: int = 15
    feature_dim: int = 64
    feature_seed: int = 0


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "loss": LossWeights,
    "data": DataConfig,
    "eval": EvalConfig,
}


def defaults() -> dict:
    out = {}
    for section, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            if section == "train" and f.name == "loss_weights":
                continue
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            out[f"{section}.{f.name}"] = default
    return out


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value, like):
    if isinstance(like, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        if value in (0, 1):
            return bool(value)
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(like, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(like, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {type(like).__name__}") from None


def apply(config: dict, updates: dict, origin: str) -> dict:
    out = dict(config)
    for key, value in _flatten(updates).items():
        if key not in out:
            raise ConfigError(f"unknown config key {key!r} (from {origin})")
        out[key] = _coerce(key, value, out[key])
    return out


def load_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of keys to values")
    return data


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(raw) if raw.strip() else ""
    return out


def resolve(path=None, overrides=None) -> dict:
    config = defaults()
    if path:
        config = apply(config, load_file(path), str(path))
    if overrides:
        config = apply(config, overrides, "command line")
    return config


def section(config: dict, name: str) -> dict:
    head = name + "."
    return {k[len(head):]: v for k, v in config.items() if k.startswith(head)}


def build(config: dict):
    """Instantiate (ModelConfig, TrainConfig, DataConfig, EvalConfig) from a flat config."""
    try:
        weights = LossWeights(**section(config, "loss"))
        model = ModelConfig(**section(config, "model"))
        train = TrainConfig(**section(config, "train"), loss_weights=weights)
        data = DataConfig(**section(config, "data"))
        ev = EvalConfig(**section(config, "eval"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return model, train, data, ev


def dump(config: dict, path):
    Path(path).write_text(yaml.safe_dump(dict(sorted(config.items())), sort_keys=True))

"""Run configuration: YAML files plus ``section.key=value`` overrides.

The default tree below is the single source of truth for what keys exist;
anything not in it is rejected with the full dotted path, so typos fail fast
instead of silently training with defaults.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .evalharness import ALL_TASKS, EvalConfig
from .ibq import CodebookPretrainConfig
from .mlm import MaskingPolicy
from .model import ModelConfig
from .encoders import ImageEncoderConfig, TextEncoderConfig
from .synth import SyntheticCorpusSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Unknown key, type mismatch, or unreadable config file."""


DEFAULTS: dict = {
    "data": {
        "n_classes": 8,
        "n_elite": 200,
        "n_categorical": 800,
        "image_size": 32,
        "seed": 0,
        "template_variants": 3,
        "noise_level": 0.14,
        "jitter": 0.22,
    },
    "text_pretrain": {
        "steps": 200,
        "batch_size": 16,
        "lr": 1e-3,
        "seed": 0,
        "mask_fraction": 0.15,
        "mask_prob": 0.8,
        "random_prob": 0.1,
    },
    "codebook": {
        "k": 256,
        "d": 64,
        "image_size": 32,
        "channels": 32,
        "steps": 500,
        "batch_size": 16,
        "lr": 1e-3,
        "commitment_beta": 0.25,
        "entropy_weight": 0.5,
        "seed": 0,
    },
    "model": {
        "image": {
            "backbone": "small-conv",
            "input_size": 32,
            "feature_channels": 64,
            "base_width": 16,
        },
        "text": {
            "vocab_size": 0,  # 0 means: size of the vocabulary built from the corpus
            "max_tokens": 64,
            "hidden_dim": 128,
            "n_layers": 2,
            "n_heads": 4,
        },
        "shared_dim": 512,
        "attention_heads": 8,
        "code_dim": 64,
    },
    "train": {
        "lambda1": 100.0,
        "lambda2": 1e4,
        "lr": 1e-4,
        "weight_decay": 1e-5,
        "batch_size": 32,
        "epochs": 10,
        "warmup_epochs": 1,
        "seed": 0,
    },
    "eval": {
        "tasks": list(ALL_TASKS),
        "n_folds": 5,
        "seed": 0,
        "shots": 16,
        "residual_ratio": 0.2,
        "adapter_epochs": 40,
        "adapter_lr": 1e-3,
        "probe_epochs": 200,
        "probe_lr": 1e-2,
        "alpha_grid": [0.5, 1.0, 2.0, 4.0, 8.0],
        "beta_grid": [0.5, 1.0, 2.0, 4.0, 8.0],
    },
}

# Keys whose value may also be null (None).
_NULLABLE = {"eval.shots"}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _check_value(path: str, default, value):
    if value is None:
        if path in _NULLABLE:
            return None
        raise ConfigError(f"{path}: null is not allowed here")
    if isinstance(default, bool) or isinstance(value, bool):
        if isinstance(default, bool) and isinstance(value, bool):
            return value
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {value!r}")
    if isinstance(default, float) and isinstance(value, int):
        return float(value)
    if default is None or isinstance(value, type(default)):
        return value
    raise ConfigError(
        f"{path}: expected {type(default).__name__}, got {type(value).__name__} {value!r}"
    )


def _merge(base: dict, incoming: dict, prefix: str = "") -> None:
    for key, value in incoming.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected a mapping of keys")
            _merge(base[key], value, f"{path}.")
        else:
            base[key] = _check_value(path, base[key], value)


def set_by_path(cfg: dict, dotted: str, raw_value: str) -> None:
    """Apply one ``section.key=value`` override; value parsed as YAML."""
    try:
        value = yaml.safe_load(raw_value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw_value!r}: {exc}") from None
    node = cfg
    parts = dotted.split(".")
    for i, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key: {'.'.join(parts[: i + 1])}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    if isinstance(node[leaf], dict):
        raise ConfigError(f"{dotted} is a section, not a value")
    node[leaf] = _check_value(dotted, node[leaf], value)


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> dict:
    """Defaults, overlaid with an optional YAML file, then with overrides."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping of sections")
        _merge(cfg, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, _, raw_value = item.partition("=")
        set_by_path(cfg, dotted.strip(), raw_value.strip())
    return cfg


def dump_default_yaml() -> str:
    return yaml.safe_dump(default_config(), sort_keys=True, default_flow_style=False)


def make_corpus_spec(cfg: dict) -> SyntheticCorpusSpec:
    return SyntheticCorpusSpec(**cfg["data"])


def make_masking_policy(cfg: dict) -> MaskingPolicy:
    t = cfg["text_pretrain"]
    return MaskingPolicy(
        mask_fraction=t["mask_fraction"],
        mask_prob=t["mask_prob"],
        random_prob=t["random_prob"],
    )


def make_codebook_config(cfg: dict) -> CodebookPretrainConfig:
    return CodebookPretrainConfig(**cfg["codebook"])


def make_model_config(cfg: dict, vocab_size: int | None = None) -> ModelConfig:
    m = cfg["model"]
    text = dict(m["text"])
    if vocab_size is not None:
        text["vocab_size"] = vocab_size
    if text["vocab_size"] <= 0:
        raise ConfigError(
            "model.text.vocab_size is unset; it is normally derived from the corpus"
        )
    return ModelConfig(
        image=ImageEncoderConfig(**m["image"]),
        text=TextEncoderConfig(**text),
        shared_dim=m["shared_dim"],
        attention_heads=m["attention_heads"],
        code_dim=m["code_dim"],
    )


def make_train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**cfg["train"])


def make_eval_config(cfg: dict) -> EvalConfig:
    e = dict(cfg["eval"])
    e["tasks"] = tuple(e["tasks"])
    e["alpha_grid"] = tuple(e["alpha_grid"])
    e["beta_grid"] = tuple(e["beta_grid"])
    return EvalConfig(**e)

"""Run configuration: JSON document, schema-validated, defaults merged.

Unknown keys are rejected so typos fail loudly instead of silently falling
back to defaults.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .model import ModelDims
from .training import TrainConfig

DEFAULT_CONFIG: dict = {
    "model": {
        "d_in": 32,
        "d": 64,
        "layers": 6,
        "in_factors": [4, 4, 4],
        "out_factors": [4, 4, 4],
        "bond_rank": 1,
        "layer_ranks": [8, 1],
        "temperature": 0.07,
        "core_std": 0.5,
        "tower_gap": 0.35,
        "backbone_seed": 0,
        "adapter_seed": 100,
    },
    "train": {
        "lambda": 0.5,
        "epochs": 10,
        "batch_size": 16,
        "learning_rate": 1e-2,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "shots": 16,
        "shuffle_seed": 0,
        "regularize_textual": False,
    },
    "data": {
        "classes": 8,
        "per_class": 32,
        "cluster_std": 0.25,
        "seed": 0,
        "min_angle_deg": 60.0,
    },
    "paths": {
        "samples": "data/samples.jsonl",
        "prototypes": "data/prototypes.jsonl",
    },
}

_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_NONNEG_NUM = {"type": "number", "minimum": 0}

RUN_CONFIG_SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d_in": _POS_INT,
                "d": _POS_INT,
                "layers": _POS_INT,
                "in_factors": {"type": "array", "items": _POS_INT, "minItems": 1},
                "out_factors": {"type": "array", "items": _POS_INT, "minItems": 1},
                "bond_rank": _POS_INT,
                "layer_ranks": {"type": "array", "items": _POS_INT, "minItems": 1},
                "temperature": _POS_NUM,
                "core_std": _POS_NUM,
                "tower_gap": _NONNEG_NUM,
                "backbone_seed": _NONNEG_INT,
                "adapter_seed": _NONNEG_INT,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda": _NONNEG_NUM,
                "epochs": _NONNEG_INT,
                "batch_size": _POS_INT,
                "learning_rate": _NONNEG_NUM,
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "eps": _POS_NUM,
                "shots": _POS_INT,
                "shuffle_seed": _NONNEG_INT,
                "regularize_textual": {"type": "boolean"},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "classes": {"type": "integer", "minimum": 2},
                "per_class": _POS_INT,
                "cluster_std": _NONNEG_NUM,
                "seed": _NONNEG_INT,
                "min_angle_deg": _NONNEG_NUM,
            },
        },
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "samples": {"type": "string"},
                "prototypes": {"type": "string"},
            },
        },
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def merge_config(base: dict, override: dict) -> dict:
    return _merge(base, override)


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def validate_config(document: dict) -> dict:
    try:
        jsonschema.validate(document, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config schema violation at {where}: {exc.message}") from exc
    return _merge(DEFAULT_CONFIG, document)


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError("config root must be a JSON object")
    return validate_config(document)


def model_dims(cfg: dict) -> ModelDims:
    m = cfg["model"]
    return ModelDims(
        d_in=m["d_in"],
        d=m["d"],
        layers=m["layers"],
        in_factors=tuple(m["in_factors"]),
        out_factors=tuple(m["out_factors"]),
        bond_rank=m["bond_rank"],
        layer_ranks=tuple(m["layer_ranks"]),
        temperature=m["temperature"],
        core_std=m["core_std"],
        tower_gap=m["tower_gap"],
        backbone_seed=m["backbone_seed"],
        adapter_seed=m["adapter_seed"],
    )


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        lam=t["lambda"],
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        beta1=t["beta1"],
        beta2=t["beta2"],
        eps=t["eps"],
        shots=t["shots"],
        shuffle_seed=t["shuffle_seed"],
        regularize_textual=t["regularize_textual"],
    )

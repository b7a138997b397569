"""Run configuration: one JSON document, schema-checked, with dotted overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict
from typing import Any, Dict, Iterable, List

import jsonschema

from .fpm import PoolConfig
from .fusion import LossWeights
from .model import ModelConfig
from .synthgen import SynthConfig
from .train import TrainConfig

SECTIONS = ("synth", "pool", "model", "train", "loss", "fusion", "paths")


class ConfigError(ValueError):
    pass


_pos_int = {"type": "integer", "minimum": 1}
_nonneg = {"type": "number", "minimum": 0}

SCHEMA: Dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "synth": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "num_classes": _pos_int,
                "samples_per_class": _pos_int,
                "frames": {"type": "integer", "minimum": 2},
                "joints": {"type": "integer", "minimum": 2},
                "scales": {"type": "array", "minItems": 1,
                           "items": {"type": "array", "minItems": 3, "maxItems": 3,
                                     "items": _pos_int}},
                "gaussian_sigma": {"type": "number", "exclusiveMinimum": 0},
                "noise_std": _nonneg,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
                "amplitude": _nonneg,
                "pose_jitter": _nonneg,
                "video_dim": _pos_int,
                "video_signal": _nonneg,
                "video_motion": _nonneg,
                "video_offset": _nonneg,
                "video_noise": _nonneg,
                "test_fraction": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "pool": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "region": {"type": "integer", "minimum": 1},
                "reducer": {"enum": ["mean", "max"]},
                "reference_scale_index": {"type": "integer", "minimum": 0},
                "pool_scale_index": {"type": "integer", "minimum": 0},
            },
        },
        "model": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["hpnet", "single"]},
                "gcn_channels": {"type": "array", "items": _pos_int},
                "text_dim": _pos_int,
                "trmm_hidden": {"type": ["integer", "null"], "minimum": 1},
                "trmm_init_std": _nonneg,
                "streams": {"type": "array", "minItems": 1, "uniqueItems": True,
                            "items": {"enum": ["p", "s", "m"]}},
                "modality": {"enum": ["joint", "bone", "joint_motion", "bone_motion"]},
                "input": {"enum": ["pooled", "pose"]},
                "label_seed": {"type": "integer", "minimum": 0},
                "input_norm": {"type": "boolean"},
            },
        },
        "train": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "epochs": _pos_int,
                "batch_size": _pos_int,
                "lr": _nonneg,
                "weight_decay": _nonneg,
                "betas": {"type": "array", "minItems": 2, "maxItems": 2,
                          "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "loss": {
            "type": "object", "additionalProperties": False,
            "properties": {"p": _nonneg, "s": _nonneg, "m": _nonneg},
        },
        "fusion": {
            "type": "object", "additionalProperties": False,
            "properties": {"tau": {"type": "number", "exclusiveMinimum": 0}},
        },
        "paths": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "skeleton": {"type": ["string", "null"]},
                "label_embeddings": {"type": ["string", "null"]},
                "label_names": {"type": ["string", "null"]},
            },
        },
    },
}


def defaults() -> Dict[str, Any]:
    synth = SynthConfig().to_dict()
    pool = asdict(PoolConfig())
    mc = ModelConfig()
    model = {"kind": mc.kind, "gcn_channels": mc.gcn_channels, "text_dim": mc.text_dim,
             "trmm_hidden": mc.trmm_hidden, "trmm_init_std": mc.trmm_init_std,
             "streams": mc.streams, "modality": mc.modality, "input": "pooled",
             "label_seed": mc.label_seed, "input_norm": mc.input_norm}
    train = asdict(TrainConfig())
    train["betas"] = list(train["betas"])
    return {
        "synth": synth,
        "pool": pool,
        "model": model,
        "train": train,
        "loss": asdict(LossWeights()),
        "fusion": {"tau": mc.tau},
        "paths": {"skeleton": None, "label_embeddings": None, "label_names": None},
    }


def _path_of(error: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "additionalProperties":
        extra = set(error.instance) - set(error.schema.get("properties", {}))
        parts.append(",".join(sorted(extra)))
    return ".".join(parts) or "<root>"


def validate(doc: Dict[str, Any]) -> None:
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(doc),
                    key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"invalid config at '{_path_of(e)}': {e.message}")


def merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str):
    """``section.key=value``; the value is JSON if it parses, else a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key {key!r} must be section.key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts[0], parts[1], value


def load(path=None, overrides: Iterable[str] = ()) -> Dict[str, Any]:
    """Defaults, then the JSON file, then ``--set`` overrides; validated."""
    doc: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    for item in overrides:
        section, key, value = parse_override(item)
        doc.setdefault(section, {})
        if not isinstance(doc[section], dict):
            raise ConfigError(f"section {section!r} must be an object")
        doc[section][key] = value
    validate(doc)
    full = merge(defaults(), doc)
    validate(full)
    try:
        synth_config(full)
        pool_config(full)
        train_config(full)
        loss_weights(full)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return full


def synth_config(doc) -> SynthConfig:
    return SynthConfig(**doc["synth"])


def pool_config(doc) -> PoolConfig:
    return PoolConfig(**doc["pool"])


def train_config(doc) -> TrainConfig:
    return TrainConfig(**doc["train"])


def loss_weights(doc) -> LossWeights:
    return LossWeights(**doc["loss"])


def model_config(doc, in_channels: int, num_classes: int, video_dim: int) -> ModelConfig:
    m = dict(doc["model"])
    m.pop("input")
    return ModelConfig(in_channels=in_channels, num_classes=num_classes, video_dim=video_dim,
                       tau=doc["fusion"]["tau"], **m)

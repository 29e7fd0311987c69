"""JSON run configuration: schema, preset resolution and object construction."""

from __future__ import annotations

import hashlib
import json
from typing import Any

import jsonschema

from .graph import GraphSpec, NodeSpec
from .likelihoods import KINDS, Likelihood
from .presets import PRESETS, deep_merge, preset
from .training import LOSS_KINDS, METHODS, ROW_SETS, Phase, TrainConfig

_POS_INT = {"type": "integer", "minimum": 1}

NODE_SCHEMA = {
    "type": "object",
    "required": ["id"],
    "additionalProperties": False,
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "parents": {"type": "array", "items": {"type": "string"}},
        "inputs": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "latent_dim": _POS_INT,
        "num_latents": _POS_INT,
        "num_inducing": _POS_INT,
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "freeze_inducing": {"type": "boolean"},
        "whiten": {"type": "boolean"},
        "likelihood": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(KINDS)},
                "num_outputs": _POS_INT,
                "num_classes": {"type": "integer", "minimum": 2},
            },
        },
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": sorted(PRESETS)},
        "graph": {
            "type": "object",
            "required": ["nodes"],
            "additionalProperties": False,
            "properties": {"nodes": {"type": "array", "minItems": 1, "items": NODE_SCHEMA}},
        },
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "loss": {"enum": list(LOSS_KINDS)},
                "method": {"enum": list(METHODS)},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "beta": {"type": "number", "minimum": 0},
                "samples": _POS_INT,
                "seed": {"type": "integer", "minimum": 0},
                "batch_size": {"type": ["integer", "null"], "minimum": 1},
                "observed": {"type": ["array", "null"], "items": {"type": "string"}},
                "freeze_inducing": {"type": "array", "items": {"type": "string"}},
                "closed_form": {"type": "boolean"},
                "phases": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["epochs"],
                        "additionalProperties": False,
                        "properties": {"epochs": _POS_INT, "rows": {"enum": list(ROW_SETS)}},
                    },
                },
                "predict_samples": _POS_INT,
                "init": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "lengthscale": {"type": "number", "exclusiveMinimum": 0},
                        "parent_lengthscale": {"type": "number", "exclusiveMinimum": 0},
                        "parent_scale": {"type": "number", "exclusiveMinimum": 0},
                        "noise": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"kind": {"enum": ["synthetic", "jura", "eeg"]}, "trial": {"type": "integer"}},
        },
    },
}


# training-section keys consumed by the driver rather than TrainConfig
RUN_ONLY_KEYS = ("predict_samples", "init")


class ConfigError(ValueError):
    """Configuration does not match the schema or describes an invalid graph."""


def resolve(raw: dict[str, Any]) -> dict[str, Any]:
    """Validate ``raw`` and overlay it on its preset (if any); the result is validated again."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    cfg = deep_merge(preset(raw["preset"]), raw) if "preset" in raw else dict(raw)
    for key in ("graph", "training", "data"):
        if key not in cfg:
            raise ConfigError(f"config missing section {key!r}")
    return cfg


def config_hash(cfg: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def build_graph(graph_cfg: dict[str, Any]) -> GraphSpec:
    nodes = []
    for n in graph_cfg["nodes"]:
        kw = dict(n)
        lik = kw.pop("likelihood", None)
        if lik is not None:
            kw["likelihood"] = Likelihood(**lik)
        for key in ("parents", "inputs"):
            if key in kw:
                kw[key] = tuple(kw[key])
        nodes.append(NodeSpec(**kw))
    return GraphSpec(nodes)


def build_training(train_cfg: dict[str, Any], seed_override: int | None = None) -> TrainConfig:
    kw = {k: v for k, v in train_cfg.items() if k not in RUN_ONLY_KEYS}
    if "phases" in kw:
        kw["phases"] = tuple(Phase(**p) for p in kw["phases"])
    if "observed" in kw and kw["observed"] is not None:
        kw["observed"] = tuple(kw["observed"])
    if "freeze_inducing" in kw:
        kw["freeze_inducing"] = tuple(kw["freeze_inducing"])
    if seed_override is not None:
        kw["seed"] = seed_override
    return TrainConfig(**kw)

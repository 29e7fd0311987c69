"""Ready-made graphs and training settings for the bundled experiments.

Each preset is a JSON-compatible dict with ``graph``, ``training`` and
``data`` sections, the same layout the ``pogpn train`` config uses.
"""

from __future__ import annotations

import copy
from typing import Any

PRESETS: dict[str, dict[str, Any]] = {
    # x -> f1 -> f2 -> f3 with skip edges x -> f2, x -> f3, f1 -> f3
    "synthetic": {
        "graph": {
            "nodes": [
                {"id": "f1", "inputs": [0], "num_inducing": 40, "whiten": True, "likelihood": {"kind": "gaussian"}},
                {"id": "f2", "parents": ["f1"], "inputs": [0], "num_inducing": 40, "whiten": True,
                 "likelihood": {"kind": "bernoulli"}},
                {"id": "f3", "parents": ["f1", "f2"], "inputs": [0], "num_inducing": 40, "whiten": True,
                 "likelihood": {"kind": "gaussian"}},
            ]
        },
        "training": {"loss": "pll", "method": "ancestor-wise", "lr": 0.02, "beta": 0.5, "samples": 20,
                     "phases": [{"epochs": 1200, "rows": "all"}], "seed": 0,
                     "init": {"lengthscale": 0.05, "parent_lengthscale": 0.2}},
        "data": {"kind": "synthetic"},
    },
    # same chain with only the final node observed
    "synthetic-dgp": {
        "graph": {
            "nodes": [
                {"id": "f1", "inputs": [0], "num_inducing": 40},
                {"id": "f2", "parents": ["f1"], "inputs": [0], "num_inducing": 40},
                {"id": "f3", "parents": ["f1", "f2"], "inputs": [0], "num_inducing": 40, "whiten": True,
                 "likelihood": {"kind": "gaussian"}},
            ]
        },
        "training": {"loss": "pll", "method": "ancestor-wise", "lr": 0.02, "beta": 0.5, "samples": 20,
                     "phases": [{"epochs": 1200, "rows": "all"}], "seed": 0,
                     "init": {"lengthscale": 0.05, "parent_lengthscale": 0.2}},
        "data": {"kind": "synthetic"},
    },
    # coordinates -> rock, land (softmax on 2-d latents) -> minerals (Ni, Zn, Cd)
    "jura": {
        "graph": {
            "nodes": [
                {"id": "rock", "inputs": [0, 1], "latent_dim": 2, "num_inducing": 259, "whiten": True,
                 "likelihood": {"kind": "softmax", "num_classes": 5}},
                {"id": "land", "inputs": [0, 1], "latent_dim": 2, "num_inducing": 259, "whiten": True,
                 "likelihood": {"kind": "softmax", "num_classes": 4}},
                {"id": "minerals", "parents": ["rock", "land"], "latent_dim": 3, "num_inducing": 259, "whiten": True,
                 "likelihood": {"kind": "multitask-gaussian", "num_outputs": 3}},
            ]
        },
        "training": {"loss": "pll", "method": "ancestor-wise", "lr": 0.01, "beta": 2.5, "samples": 20,
                     "phases": [{"epochs": 200, "rows": "full"}, {"epochs": 50, "rows": "all"}], "seed": 0},
        "data": {"kind": "jura"},
    },
    # time -> context sensors (F3-F6) -> target sensors (F1, F2, FZ)
    "eeg": {
        "graph": {
            "nodes": [
                {"id": "context", "inputs": [0], "latent_dim": 4, "num_inducing": 256, "whiten": True, "freeze_inducing": True,
                 "likelihood": {"kind": "multitask-gaussian", "num_outputs": 4}},
                {"id": "targets", "parents": ["context"], "latent_dim": 3, "num_inducing": 156, "whiten": True,
                 "likelihood": {"kind": "multitask-gaussian", "num_outputs": 3}},
            ]
        },
        "training": {"loss": "pll", "method": "ancestor-wise", "lr": 0.02, "beta": 1.0, "samples": 20,
                     "phases": [{"epochs": 300, "rows": "full"}, {"epochs": 150, "rows": "all"}], "seed": 0},
        "data": {"kind": "eeg"},
    },
}


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Recursively overlay ``override`` on a copy of ``base``; lists are replaced whole."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def preset(name: str) -> dict[str, Any]:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None

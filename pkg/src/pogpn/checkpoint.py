"""Versioned JSON checkpoints.

Layout (keys sorted, floats written with full round-trip precision)::

    {"format": "pogpn-checkpoint", "version": 1,
     "config": {...resolved run config...}, "seed": int,
     "standardization": {group: [{"column", "log", "mean", "std"}, ...]},
     "parameters": {"node/group/field": {"shape": [...], "values": [...]}}}

``standardization`` groups are node ids plus ``"X"`` for input columns.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .data import StandardizationRecord
from .graph import NodeState, flatten_states
from .kernels import ConstantMeanParams, MixingMatrix, SEKernelParams
from .likelihoods import LikelihoodParams
from .svgp import VariationalState

FORMAT = "pogpn-checkpoint"
VERSION = 1

_GROUP_TYPES = {
    "kernel": SEKernelParams,
    "mean": ConstantMeanParams,
    "variational": VariationalState,
    "mixing": MixingMatrix,
    "likelihood": LikelihoodParams,
}


class CheckpointError(ValueError):
    """Checkpoint file is unreadable or does not match the expected layout."""


def dumps(obj: Any) -> str:
    """Canonical JSON text: sorted keys, no NaN, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def encode_states(states: Mapping[str, NodeState]) -> dict[str, Any]:
    out = {}
    for name, value in flatten_states(states).items():
        arr = np.asarray(value, dtype=np.float64)
        out[name] = {"shape": list(arr.shape), "values": [float(v) for v in arr.ravel()]}
    return out


def decode_states(params: Mapping[str, Any]) -> dict[str, NodeState]:
    grouped: dict[str, dict[str, dict[str, np.ndarray]]] = {}
    for name, entry in params.items():
        try:
            nid, group, fname = name.split("/")
            arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CheckpointError(f"bad parameter entry {name!r}: {exc}") from None
        if group not in _GROUP_TYPES:
            raise CheckpointError(f"unknown parameter group {group!r} in {name!r}")
        grouped.setdefault(nid, {}).setdefault(group, {})[fname] = arr
    states = {}
    for nid, groups in grouped.items():
        try:
            parts = {g: _GROUP_TYPES[g](**fields) for g, fields in groups.items()}
            states[nid] = NodeState(**parts)
        except TypeError as exc:
            raise CheckpointError(f"node {nid!r}: {exc}") from None
    return states


def encode_records(records: Mapping[str, list[StandardizationRecord]]) -> dict[str, Any]:
    return {k: [r.to_dict() for r in v] for k, v in records.items()}


def decode_records(raw: Mapping[str, Any]) -> dict[str, list[StandardizationRecord]]:
    return {k: [StandardizationRecord(**r) for r in v] for k, v in raw.items()}


def build(config: dict[str, Any], seed: int, states: Mapping[str, NodeState],
          records: Mapping[str, list[StandardizationRecord]]) -> dict[str, Any]:
    return {
        "format": FORMAT,
        "version": VERSION,
        "config": config,
        "seed": seed,
        "standardization": encode_records(records),
        "parameters": encode_states(states),
    }


def save(path: str | Path, ckpt: dict[str, Any]) -> None:
    write_atomic(path, dumps(ckpt))


def load(path: str | Path) -> dict[str, Any]:
    try:
        ckpt = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(ckpt, dict) or ckpt.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if ckpt.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {ckpt.get('version')!r}")
    for key in ("config", "seed", "standardization", "parameters"):
        if key not in ckpt:
            raise CheckpointError(f"{path}: missing {key!r}")
    return ckpt

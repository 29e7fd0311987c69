"""Run-level glue: bind a config to data, fit, predict tables and evaluate."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import config as cfgmod
from . import data as datamod
from . import graph, training
from .data import DataError, StandardizationRecord
from .graph import Dataset, GraphSpec, NodeState

# input column names per data kind, in the order of X's columns
INPUT_COLUMNS = {"synthetic": ["x"], "jura": ["x", "y"], "eeg": ["t"]}
DEFAULT_PREDICT_SAMPLES = 100


@dataclass
class BoundData:
    """Training data plus whatever the evaluator needs for this data kind."""

    kind: str
    train: Dataset
    test: Dataset | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def records(self) -> dict[str, list[StandardizationRecord]]:
        return self.train.standardization


def load_bound_data(cfg: Mapping[str, Any], data_dir: str | Path | None) -> BoundData:
    """Load the dataset named by ``cfg["data"]``; missing files raise ``FileNotFoundError``."""
    kind = cfg["data"].get("kind")
    if kind is None:
        raise cfgmod.ConfigError("config data.kind is required")
    if data_dir is None:
        raise FileNotFoundError("--data-dir is required")
    d = Path(data_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"data directory {d} does not exist")
    if kind == "synthetic":
        train_path, test_path = d / "train.csv", d / "test.csv"
        if not train_path.is_file():
            raise FileNotFoundError(f"{train_path} not found (run `pogpn synth` first)")
        train = datamod.load_synth_csv(train_path)
        test = datamod.load_synth_csv(test_path, train.standardization) if test_path.is_file() else None
        return BoundData(kind, train, test)
    if kind == "jura":
        jd = datamod.load_jura(*datamod.find_jura_files(d))
        return BoundData(kind, jd.train, extra={"cd_truth": jd.cd_truth, "test_rows": jd.test_rows})
    if kind == "eeg":
        ed = datamod.load_eeg(datamod.find_eeg_file(d), cfg["data"].get("trial"))
        return BoundData(kind, ed.train, extra={"target_truth": ed.target_truth, "test_rows": ed.test_rows})
    raise cfgmod.ConfigError(f"unknown data kind {kind!r}")


def check_binding(spec: GraphSpec, ds: Dataset) -> None:
    """Every observed node must have a data column of the right width."""
    for node in spec.nodes:
        if node.likelihood is None:
            continue
        if node.id not in ds.Y:
            raise DataError(f"node {node.id!r} has a likelihood but the data has no column for it")
        if ds.Y[node.id].shape[1] != node.likelihood.obs_dim:
            raise DataError(f"node {node.id!r}: data has {ds.Y[node.id].shape[1]} columns, "
                            f"likelihood expects {node.likelihood.obs_dim}")
    need = max((max(n.inputs) + 1 for n in spec.nodes if n.inputs), default=0)
    if ds.X.shape[1] < need:
        raise DataError(f"graph needs {need} input columns, data has {ds.X.shape[1]}")


def env_seed(default: int) -> int:
    raw = os.environ.get("POGPN_SEED")
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise cfgmod.ConfigError(f"POGPN_SEED must be an integer, got {raw!r}") from None


@dataclass
class FitResult:
    spec: GraphSpec
    train_cfg: training.TrainConfig
    result: training.TrainResult


def fit(cfg: Mapping[str, Any], ds: Dataset, seed: int | None = None) -> FitResult:
    """Build graph and optimiser settings from a resolved config and train."""
    spec = cfgmod.build_graph(cfg["graph"])
    tcfg = cfgmod.build_training(cfg["training"], seed)
    check_binding(spec, ds)
    init_kw = dict(cfg["training"].get("init", {}))
    states = training.init_states(spec, ds, tcfg.seed, **init_kw)
    return FitResult(spec, tcfg, training.train(spec, states, ds, tcfg))


# ---------------------------------------------------------------------------
# prediction tables
# ---------------------------------------------------------------------------


def _original_units(mean: np.ndarray, var: np.ndarray, rec: StandardizationRecord | None):
    """Point value, variance and 95% band of one column in original units."""
    sd = np.sqrt(np.maximum(var, 0.0))
    if rec is None:
        return mean, var, mean - 1.96 * sd, mean + 1.96 * sd
    m = rec.mean + rec.std * mean
    s = rec.std * sd
    if not rec.log:
        return m, s**2, m - 1.96 * s, m + 1.96 * s
    # log-normal: median exp(m), variance of the log-normal, band from log-space quantiles
    v = s**2
    return np.exp(m), np.expm1(v) * np.exp(2 * m + v), np.exp(m - 1.96 * s), np.exp(m + 1.96 * s)


def output_names(spec: GraphSpec, nid: str, records: Mapping[str, list[StandardizationRecord]]) -> list[str]:
    node = spec[nid]
    recs = records.get(nid)
    if recs is not None and len(recs) == node.latent_dim:
        return [r.column for r in recs]
    if node.latent_dim == 1:
        return [nid]
    return [f"{nid}_{j}" for j in range(node.latent_dim)]


def prediction_table(spec: GraphSpec, states: Mapping[str, NodeState], X_model: np.ndarray,
                     X_original: np.ndarray, input_names: list[str],
                     records: Mapping[str, list[StandardizationRecord]], S: int, seed: int,
                     zero_noise: bool = False) -> tuple[list[str], np.ndarray]:
    """Header and rows for the per-node predictive CSV.

    Gaussian nodes report observation-space moments (noise included) in
    original units; other nodes report latent moments plus class
    probabilities.
    """
    preds = graph.predict(spec, states, X_model, S, np.random.default_rng(seed), zero_noise=zero_noise)
    header = list(input_names)
    cols = [X_original[:, j] for j in range(X_original.shape[1])]
    for nid in spec.order:
        p = preds[nid]
        lik = spec[nid].likelihood
        gaussian = lik is not None and lik.is_gaussian
        var = p.obs_var if gaussian else p.var
        recs = records.get(nid) if gaussian else None
        for j, name in enumerate(output_names(spec, nid, records if gaussian else {})):
            rec = recs[j] if recs is not None and j < len(recs) else None
            m, v, lo, hi = _original_units(p.mean[:, j], var[:, j], rec)
            header += [f"{name}_mean", f"{name}_var", f"{name}_lower", f"{name}_upper"]
            cols += [m, v, lo, hi]
        if p.probs is not None:
            for k in range(p.probs.shape[1]):
                header.append(f"{nid}_prob_{k}")
                cols.append(p.probs[:, k])
    return header, np.column_stack(cols)


def model_inputs(X_original: np.ndarray, records: Mapping[str, list[StandardizationRecord]]) -> np.ndarray:
    recs = records.get("X")
    if recs is None:
        return X_original
    return np.column_stack([r.apply(X_original[:, j]) for j, r in enumerate(recs)])


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def categorical_metrics(labels: np.ndarray, probs: np.ndarray) -> dict[str, float]:
    """Classification analogues: MAE is the error rate of the most probable class,
    SMSE the Brier score over that of predicting the empirical class frequencies,
    MLL the mean negative log predictive probability."""
    labels = np.asarray(labels, dtype=int).ravel()
    onehot = np.eye(probs.shape[1])[labels]
    brier = np.mean(np.sum((probs - onehot) ** 2, axis=1))
    freq = onehot.mean(axis=0)
    base = np.mean(np.sum((freq - onehot) ** 2, axis=1))
    p_true = np.clip(probs[np.arange(labels.size), labels], 1e-300, None)
    return {
        "MAE": float(np.mean(probs.argmax(axis=1) != labels)),
        "SMSE": float(brier / base) if base > 0 else float("nan"),
        "MLL": float(-np.mean(np.log(p_true))),
    }


def _node_metrics(spec: GraphSpec, nid: str, pred: graph.PredictiveSummary, y: np.ndarray,
                  records: Mapping[str, list[StandardizationRecord]]) -> dict[str, float]:
    lik = spec[nid].likelihood
    if lik.is_gaussian:
        m = datamod.metrics(y, pred.mean, pred.obs_var, records.get(nid))
        return {k: m[k] for k in ("MAE", "SMSE", "MLL")}
    return categorical_metrics(y, pred.probs)


def evaluate(spec: GraphSpec, states: Mapping[str, NodeState], bound: BoundData, S: int,
             seed: int) -> dict[str, Any]:
    """``{node: {MAE, SMSE, MLL}}`` for every observed node, plus ``Cd_conditional_MAE`` on Jura."""
    rng = np.random.default_rng(seed)
    records = bound.records
    observed = spec.observed_nodes()
    out: dict[str, Any] = {}
    if bound.kind == "synthetic":
        if bound.test is None:
            raise FileNotFoundError("test.csv not found in the data directory")
        preds = graph.predict(spec, states, bound.test.X, S, rng, nodes=observed)
        for nid in observed:
            y = bound.test.Y[nid]
            recs = records.get(nid)
            y_orig = np.column_stack([r.invert(y[:, j]) for j, r in enumerate(recs)]) if recs else y
            out[nid] = _node_metrics(spec, nid, preds[nid], y_orig, records)
        return out
    rows = bound.extra["test_rows"]
    X = bound.train.X[rows]
    preds = graph.predict(spec, states, X, S, rng, nodes=observed)
    if bound.kind == "jura":
        return _evaluate_jura(spec, preds, bound, rows, observed)
    truth = bound.extra["target_truth"]
    for nid in observed:
        if nid == "targets":
            y = truth
        else:
            recs = records.get(nid)
            y = np.column_stack([r.invert(bound.train.Y[nid][rows, j]) for j, r in enumerate(recs)])
        out[nid] = _node_metrics(spec, nid, preds[nid], y, records)
    return out


def _evaluate_jura(spec, preds, bound, rows, observed) -> dict[str, Any]:
    records = bound.records
    out: dict[str, Any] = {}
    cd_truth = bound.extra["cd_truth"]
    m_recs = records["minerals"]
    for nid in observed:
        p = preds[nid]
        if nid != "minerals":
            out[nid] = categorical_metrics(bound.train.Y[nid][rows], p.probs)
            continue
        # unconditional metrics on the hidden Cd column only
        m = datamod.metrics(cd_truth, p.mean[:, 2], p.obs_var[:, 2], [m_recs[2]])
        out[nid] = {k: m[k] for k in ("MAE", "SMSE", "MLL")}
    known = bound.train.Y["minerals"][rows][:, :2]
    cond_mean, _ = graph.condition_gaussian(preds["minerals"].mean, preds["minerals"].obs_cov,
                                                   [0, 1], known)
    cd = m_recs[2]
    cd_point = np.exp(cd.mean + cd.std * cond_mean[:, 2])
    out["Cd_conditional_MAE"] = float(np.mean(np.abs(cd_point - cd_truth)))
    return out

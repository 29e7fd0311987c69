"""Ancestor-wise and node-wise optimisation of a GP network with Adam."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import graph
from .graph import Dataset, GraphSpec, NodeState
from .kernels import ConstantMeanParams, MixingMatrix, SEKernelParams, inv_softplus, se_kernel
from .svgp import VariationalState

logger = logging.getLogger(__name__)

LOSS_KINDS = ("elbo", "pll")
METHODS = ("ancestor-wise", "node-wise")
ROW_SETS = ("all", "full", "partial")


class TrainingDiverged(RuntimeError):
    """Loss or gradient became non-finite; ``trace`` holds the steps so far."""

    def __init__(self, message: str, trace: list[TraceRow]):
        super().__init__(message)
        self.trace = trace


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


@dataclass(frozen=True)
class Phase:
    """``epochs`` passes over the rows selected by ``rows``.

    ``full`` keeps rows where every observed node is completely observed,
    ``partial`` the remainder, ``all`` everything.
    """

    epochs: int
    rows: str = "all"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.rows not in ROW_SETS:
            raise ValueError(f"rows must be one of {ROW_SETS}")


@dataclass
class TrainConfig:
    loss: str = "pll"
    method: str = "ancestor-wise"
    lr: float = 0.01
    phases: Sequence[Phase] = (Phase(100),)
    samples: int = 20
    beta: float = 1.0
    seed: int = 0
    observed: Sequence[str] | None = None
    batch_size: int | None = None
    freeze_inducing: Sequence[str] = ()
    closed_form: bool = False

    def __post_init__(self) -> None:
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.phases = tuple(p if isinstance(p, Phase) else Phase(**p) for p in self.phases)
        if not self.phases:
            raise ValueError("at least one training phase is required")

    @property
    def total_epochs(self) -> int:
        return sum(p.epochs for p in self.phases)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update of every parameter that has a gradient.

    Step counters are per parameter, so a parameter that sits out some steps
    (node-wise training) keeps its own bias correction.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    out = dict(params)
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        t = state.t.get(name, 0) + 1
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        out[name] = np.asarray(params[name], dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        state.m[name], state.v[name], state.t[name] = m, v, t
    return out


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def _pick_rows(rng: np.random.Generator, candidates: np.ndarray, M: int, node_id: str) -> tuple[np.ndarray, bool]:
    n = candidates.size
    if M == n:
        return candidates, False
    if M < n:
        return np.sort(rng.choice(candidates, size=M, replace=False)), False
    logger.warning("node %s: %d inducing points but only %d rows; resampling with jitter", node_id, M, n)
    extra = rng.choice(candidates, size=M - n, replace=True)
    return np.concatenate([candidates, extra]), True


def init_states(spec: GraphSpec, data: Dataset, seed: int = 0, *, parent_scale: float = 1.0,
                noise: float = 0.1, prior_covariance: bool = True, lengthscale: float = 1.0,
                parent_lengthscale: float | None = None) -> dict[str, NodeState]:
    """Deterministic starting parameters for every node.

    Inducing inputs on adjustable-input columns are copied from the fully
    observed rows (all of them when ``M`` matches, a subsample when fewer,
    resampled with small jitter when more).  Parent-latent columns are drawn
    from ``N(0, parent_scale^2)``.  With ``prior_covariance`` the variational
    covariance starts at ``K(Z, Z)`` so the initial KL is zero; otherwise at I.
    Whitened nodes always start at the identity, which is their prior.
    Kernels start at ``lengthscale`` on adjustable inputs and
    ``parent_lengthscale`` (default: the same) on parent-latent columns.
    """
    rng = np.random.default_rng(seed)
    full = np.flatnonzero(data.full_rows())
    if full.size == 0:
        full = np.arange(data.num_rows)
    states = {}
    for nid in spec.order:
        node = spec[nid]
        L = node.n_latents
        M = node.num_inducing
        parts = []
        parent_dim = sum(spec[p].latent_dim for p in node.parents)
        if parent_dim:
            parts.append(parent_scale * rng.standard_normal((M, parent_dim)))
        if node.inputs:
            rows, dup = _pick_rows(rng, full, M, nid)
            Zx = data.X[np.ix_(rows, list(node.inputs))].copy()
            if dup:
                Zx[full.size:] += 1e-3 * rng.standard_normal(Zx[full.size:].shape)
            parts.append(Zx)
        Z = np.concatenate(parts, axis=1)
        kernel = SEKernelParams.init(Z.shape[1], (L,), lengthscale=lengthscale)
        if parent_dim and parent_lengthscale is not None:
            raw = np.array(kernel.raw_lengthscales)
            raw[..., :parent_dim] = inv_softplus(parent_lengthscale)
            kernel = SEKernelParams(raw_lengthscales=raw, raw_outputscale=kernel.raw_outputscale)
        mean = ConstantMeanParams.init((L,))
        if prior_covariance and not node.whiten:
            chol = ad.cholesky(se_kernel(Z, Z, kernel), name=nid).data
            variational = VariationalState.from_moments(Z, np.zeros((L, M)), chol)
        else:
            variational = VariationalState.init(Z, L)
        mixing = None
        if node.mixed:
            B = np.eye(node.latent_dim) if L == node.latent_dim else rng.standard_normal((node.latent_dim, L))
            mixing = MixingMatrix(B)
        lik = node.likelihood.init_params(node.latent_dim, rng, noise) if node.likelihood else None
        states[nid] = NodeState(kernel=kernel, mean=mean, variational=variational, mixing=mixing, likelihood=lik)
    return {n.id: states[n.id] for n in spec.nodes}


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    scope: str
    loss: float


@dataclass
class TrainResult:
    states: dict[str, NodeState]
    trace: list[TraceRow]

    def losses(self, scope: str = "total") -> np.ndarray:
        return np.array([r.loss for r in self.trace if r.scope == scope])


def write_trace(path: str | Path, trace: Iterable[TraceRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "scope", "loss"])
        for r in trace:
            w.writerow([r.epoch, r.scope, repr(r.loss)])


def trainable_names(spec: GraphSpec, states: Mapping[str, NodeState], gp_nodes: Iterable[str],
                    lik_nodes: Iterable[str], frozen_inducing: Iterable[str] = ()) -> list[str]:
    frozen = set(frozen_inducing) | {n.id for n in spec.nodes if n.freeze_inducing}
    gp_nodes, lik_nodes = set(gp_nodes), set(lik_nodes)
    names = []
    for nid in spec.order:
        for name in graph.node_param_names(states, nid, gp=nid in gp_nodes, likelihood=nid in lik_nodes):
            if nid in frozen and name == f"{nid}/variational/Z":
                continue
            names.append(name)
    return names


def _phase_rows(data: Dataset, rows: str) -> np.ndarray:
    full = data.full_rows()
    if rows == "all":
        return np.arange(data.num_rows)
    return np.flatnonzero(full if rows == "full" else ~full)


def _batches(rng: np.random.Generator, n: int, batch_size: int | None) -> list[np.ndarray]:
    if batch_size is None or batch_size >= n:
        return [np.arange(n)]
    perm = rng.permutation(n)
    return [np.sort(perm[i:i + batch_size]) for i in range(0, n, batch_size)]


def _observed(spec: GraphSpec, cfg: TrainConfig, data: Dataset) -> list[str]:
    obs = spec.observed_nodes() if cfg.observed is None else [i for i in spec.order if i in set(cfg.observed)]
    if not obs:
        raise ValueError("no observed nodes to train on")
    for nid in obs:
        if spec[nid].likelihood is None:
            raise graph.GraphError(f"node {nid!r} is marked observed but has no likelihood")
    return obs


def _active(obs: Sequence[str], data: Dataset) -> list[str]:
    return [nid for nid in obs if data.row_mask(nid).any()]


def _loss_fn(spec, states, names, batch, cfg, rng, ll_nodes, kl_nodes, ll_scale):
    loss_kind = cfg.loss

    def fn(*values):
        st = graph.rebuild_states(states, dict(zip(names, values)))
        terms = graph.loss_terms(spec, st, batch, cfg.samples, rng, kind=loss_kind, ll_nodes=ll_nodes,
                                 kl_nodes=kl_nodes, closed_form=cfg.closed_form, ll_scale=ll_scale)
        return terms.total(cfg.beta)

    return fn


def _step(spec, states, names, batch, cfg, rng, adam, ll_nodes, kl_nodes, ll_scale, trace, epoch, scope):
    flat = graph.flatten_states(states)
    fn = _loss_fn(spec, states, names, batch, cfg, rng, ll_nodes, kl_nodes, ll_scale)
    try:
        value, grads = ad.value_and_grad(fn, *[flat[n] for n in names])
        params = adam_step({n: flat[n] for n in names}, dict(zip(names, grads)), adam, cfg.lr)
    except (ad.NonFiniteError, NonFiniteGradient) as exc:
        raise TrainingDiverged(f"epoch {epoch} ({scope}): {exc}", trace) from exc
    if not np.isfinite(value):
        raise TrainingDiverged(f"epoch {epoch} ({scope}): loss is {value}", trace)
    trace.append(TraceRow(epoch, scope, value))
    return graph.rebuild_states(states, params)


def _ll_scale(data: Dataset, batch_rows: np.ndarray, nodes: Sequence[str]) -> dict[str, float] | None:
    if batch_rows.size == data.num_rows:
        return None
    scale = {}
    for nid in nodes:
        total = int(data.row_mask(nid).sum())
        part = int(data.row_mask(nid)[batch_rows].sum())
        scale[nid] = total / part if part else 0.0
    return scale


def train_ancestor_wise(spec: GraphSpec, states: Mapping[str, NodeState], data: Dataset,
                        cfg: TrainConfig) -> TrainResult:
    """Joint Adam steps on observed nodes, their ancestors and observed likelihoods.

    Parameters of every other node are never touched.
    """
    obs = _observed(spec, cfg, data)
    rng = np.random.default_rng(cfg.seed)
    adam = AdamState()
    trace: list[TraceRow] = []
    states = dict(states)
    epoch = 0
    for phase in cfg.phases:
        phase_data = data.subset(_phase_rows(data, phase.rows))
        active = _active(obs, phase_data)
        if not active:
            logger.warning("phase with rows=%s has no observations; skipped", phase.rows)
            continue
        scope_nodes = spec.closure(active)
        names = trainable_names(spec, states, scope_nodes, active, cfg.freeze_inducing)
        for _ in range(phase.epochs):
            for rows in _batches(rng, phase_data.num_rows, cfg.batch_size):
                batch = phase_data.subset(rows) if rows.size < phase_data.num_rows else phase_data
                ll_nodes = _active(active, batch)
                states = _step(spec, states, names, batch, cfg, rng, adam, ll_nodes, scope_nodes,
                               _ll_scale(phase_data, rows, ll_nodes), trace, epoch, "total")
            epoch += 1
    return TrainResult(states=states, trace=trace)


def train_node_wise(spec: GraphSpec, states: Mapping[str, NodeState], data: Dataset,
                    cfg: TrainConfig) -> TrainResult:
    """Coordinate steps: one node's GP and likelihood parameters at a time.

    Each inner step draws a fresh forward pass through the node's ancestors
    using the latest parameters, then updates only that node.
    """
    obs = _observed(spec, cfg, data)
    rng = np.random.default_rng(cfg.seed)
    adam = AdamState()
    trace: list[TraceRow] = []
    states = dict(states)
    epoch = 0
    for phase in cfg.phases:
        phase_data = data.subset(_phase_rows(data, phase.rows))
        active = _active(obs, phase_data)
        if not active:
            logger.warning("phase with rows=%s has no observations; skipped", phase.rows)
            continue
        for _ in range(phase.epochs):
            for rows in _batches(rng, phase_data.num_rows, cfg.batch_size):
                batch = phase_data.subset(rows) if rows.size < phase_data.num_rows else phase_data
                for nid in spec.order:
                    if nid not in active or not batch.row_mask(nid).any():
                        continue
                    names = trainable_names(spec, states, [nid], [nid], cfg.freeze_inducing)
                    states = _step(spec, states, names, batch, cfg, rng, adam, [nid], [nid],
                                   _ll_scale(phase_data, rows, [nid]), trace, epoch, nid)
            epoch += 1
    return TrainResult(states=states, trace=trace)


def train(spec: GraphSpec, states: Mapping[str, NodeState], data: Dataset, cfg: TrainConfig) -> TrainResult:
    if cfg.method == "ancestor-wise":
        return train_ancestor_wise(spec, states, data, cfg)
    return train_node_wise(spec, states, data, cfg)

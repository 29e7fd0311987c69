"""DAG of sparse GP nodes with per-node observation likelihoods.

Nodes are visited in topological order.  A node's GP input is the
concatenation of its parents' sampled latents and its adjustable input
columns; one Monte-Carlo index ``s`` is shared by the whole graph so every
child sees a coherent draw of its ancestors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .kernels import ConstantMeanParams, MixingMatrix, SEKernelParams, mix_outputs
from .likelihoods import Likelihood, LikelihoodParams
from .svgp import InducingPrior, MarginalGaussian, VariationalState, inducing_prior, kl_u, marginal_q


class GraphError(ValueError):
    """Invalid graph structure or data binding."""


@dataclass(frozen=True)
class NodeSpec:
    """One subprocess node.

    ``inputs`` are column indices into the shared adjustable-input matrix X.
    ``num_latents`` defaults to ``latent_dim``; a multi-output node mixes its
    latents with a learnable matrix.  ``alpha`` defaults to the observation
    dimension.  A node without a likelihood only contributes KL.
    ``whiten`` switches the node's variational parameters to whitened
    coordinates.
    """

    id: str
    parents: tuple[str, ...] = ()
    inputs: tuple[int, ...] = ()
    latent_dim: int = 1
    num_latents: int | None = None
    num_inducing: int = 20
    likelihood: Likelihood | None = None
    alpha: float | None = None
    freeze_inducing: bool = False
    whiten: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "inputs", tuple(int(c) for c in self.inputs))
        if self.alpha is not None and not self.alpha > 0:
            raise GraphError(f"node {self.id!r}: alpha must be positive")
        if self.latent_dim < 1 or self.n_latents < 1 or self.num_inducing < 1:
            raise GraphError(f"node {self.id!r}: dimensions must be positive")

    @property
    def n_latents(self) -> int:
        return self.latent_dim if self.num_latents is None else self.num_latents

    @property
    def mixed(self) -> bool:
        return self.latent_dim > 1 or self.n_latents != self.latent_dim

    @property
    def norm(self) -> float:
        if self.alpha is not None:
            return float(self.alpha)
        return float(self.likelihood.obs_dim) if self.likelihood is not None else 1.0


@dataclass
class GraphSpec:
    nodes: list[NodeSpec]

    def __post_init__(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise GraphError("duplicate node ids")
        known = set(ids)
        for n in self.nodes:
            for p in n.parents:
                if p not in known:
                    raise GraphError(f"node {n.id!r} has unknown parent {p!r}")
        self._by_id = {n.id: n for n in self.nodes}
        self.order = topological_sort(self)

    def __getitem__(self, node_id: str) -> NodeSpec:
        return self._by_id[node_id]

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(p, n.id) for n in self.nodes for p in n.parents]

    @property
    def ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def input_dim(self, node_id: str) -> int:
        n = self[node_id]
        return len(n.inputs) + sum(self[p].latent_dim for p in n.parents)

    def ancestors(self, node_ids: Iterable[str]) -> set[str]:
        out: set[str] = set()
        stack = [p for i in node_ids for p in self[i].parents]
        while stack:
            p = stack.pop()
            if p not in out:
                out.add(p)
                stack.extend(self[p].parents)
        return out

    def closure(self, node_ids: Iterable[str]) -> list[str]:
        """``node_ids`` plus all ancestors, in topological order."""
        keep = set(node_ids)
        keep |= self.ancestors(keep)
        return [i for i in self.order if i in keep]

    def observed_nodes(self) -> list[str]:
        return [i for i in self.order if self[i].likelihood is not None]


def topological_sort(spec: GraphSpec | Iterable[NodeSpec]) -> list[str]:
    """Parents before children; ties go to the earlier-declared node."""
    nodes = list(spec.nodes if isinstance(spec, GraphSpec) else spec)
    parents = {n.id: set(n.parents) for n in nodes}
    placed: list[str] = []
    done: set[str] = set()
    remaining = [n.id for n in nodes]
    while remaining:
        for i, nid in enumerate(remaining):
            if parents[nid] <= done:
                placed.append(nid)
                done.add(nid)
                del remaining[i]
                break
        else:
            # walk parent links inside the blocked set until a node repeats
            node = remaining[0]
            seen: list[str] = []
            while node not in seen:
                seen.append(node)
                node = next(p for p in parents[node] if p not in done)
            raise GraphError(f"graph has a cycle through node {node!r}")
    return placed


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

GP_GROUPS = ("kernel", "mean", "variational", "mixing")


@dataclass
class NodeState:
    kernel: SEKernelParams
    mean: ConstantMeanParams
    variational: VariationalState
    mixing: MixingMatrix | None = None
    likelihood: LikelihoodParams | None = None


def flatten_states(states: Mapping[str, NodeState]) -> dict[str, Any]:
    """``{"node/group/field": value}`` for every non-empty parameter."""
    flat = {}
    for nid, st in states.items():
        for group in GP_GROUPS + ("likelihood",):
            part = getattr(st, group)
            if part is None:
                continue
            for f in dataclasses.fields(part):
                value = getattr(part, f.name)
                if value is not None:
                    flat[f"{nid}/{group}/{f.name}"] = value
    return flat


def rebuild_states(states: Mapping[str, NodeState], values: Mapping[str, Any]) -> dict[str, NodeState]:
    """Copy of ``states`` with the named parameters replaced."""
    updates: dict[str, dict[str, dict[str, Any]]] = {}
    for name, value in values.items():
        nid, group, fname = name.split("/")
        updates.setdefault(nid, {}).setdefault(group, {})[fname] = value
    out = {}
    for nid, st in states.items():
        if nid not in updates:
            out[nid] = st
            continue
        changes = {g: dataclasses.replace(getattr(st, g), **f) for g, f in updates[nid].items()}
        out[nid] = dataclasses.replace(st, **changes)
    return out


def node_param_names(states: Mapping[str, NodeState], node_id: str, *, gp: bool = True,
                     likelihood: bool = True) -> list[str]:
    names = []
    for name in flatten_states({node_id: states[node_id]}):
        group = name.split("/")[1]
        if (group == "likelihood" and likelihood) or (group != "likelihood" and gp):
            names.append(name)
    return names


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Adjustable inputs ``X`` (N x D_x) plus per-node observations and masks.

    ``Y[node]`` is ``(N, D_y)``; ``mask[node]`` flags observed entries.
    ``standardization`` holds per-column records used to map back to original
    units.
    """

    X: np.ndarray
    Y: dict[str, np.ndarray] = field(default_factory=dict)
    mask: dict[str, np.ndarray] = field(default_factory=dict)
    standardization: dict[str, list] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        for k in list(self.Y):
            y = np.asarray(self.Y[k], dtype=np.float64)
            self.Y[k] = y[:, None] if y.ndim == 1 else y
            if k not in self.mask:
                self.mask[k] = ~np.isnan(self.Y[k])
            self.mask[k] = np.asarray(self.mask[k], dtype=bool).reshape(self.Y[k].shape)
            if self.Y[k].shape[0] != self.num_rows:
                raise GraphError(f"node {k!r}: {self.Y[k].shape[0]} rows, X has {self.num_rows}")

    @property
    def num_rows(self) -> int:
        return self.X.shape[0]

    def row_mask(self, node_id: str) -> np.ndarray:
        return self.mask[node_id].any(axis=1)

    def full_rows(self) -> np.ndarray:
        """Rows on which every node's observation is complete."""
        keep = np.ones(self.num_rows, dtype=bool)
        for m in self.mask.values():
            keep &= m.all(axis=1)
        return keep

    def subset(self, rows: np.ndarray) -> Dataset:
        rows = np.asarray(rows)
        return Dataset(
            X=self.X[rows],
            Y={k: v[rows] for k, v in self.Y.items()},
            mask={k: v[rows] for k, v in self.mask.items()},
            standardization=self.standardization,
        )


# ---------------------------------------------------------------------------
# forward sampling
# ---------------------------------------------------------------------------


@dataclass
class NodeSamples:
    """Samples ``f`` (S, N, D_f) and per-sample moments.

    ``latent`` holds the marginals of the unmixed latent GPs with shape
    ``(L, N)`` for root-input nodes or ``(S, L, N)`` otherwise; ``mean``/``var``
    are the mixed per-output moments with a leading axis of 1 or S.
    """

    f: Tensor
    mean: Tensor
    var: Tensor
    latent: MarginalGaussian


ForwardSamples = dict


def node_inputs(spec: GraphSpec, node_id: str, X: Any, samples: Mapping[str, NodeSamples],
                S: int) -> Tensor:
    node = spec[node_id]
    X = as_tensor(X)
    if node.inputs and max(node.inputs) >= X.shape[1]:
        raise GraphError(f"node {node_id!r} needs input column {max(node.inputs)}, X has {X.shape[1]}")
    adj = X[:, list(node.inputs)] if node.inputs else None
    if not node.parents:
        if adj is None:
            raise GraphError(f"root node {node_id!r} declares no adjustable inputs")
        return adj
    parts = [samples[p].f for p in node.parents]
    if adj is not None:
        parts.append(ad.broadcast(adj, (S,) + adj.shape))
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)


def forward_sample(spec: GraphSpec, states: Mapping[str, NodeState], X: Any, S: int,
                   rng: np.random.Generator | None = None, *, nodes: Iterable[str] | None = None,
                   zero_noise: bool = False, priors: dict[str, InducingPrior] | None = None,
                   base_jitter: float = ad.DEFAULT_JITTER) -> ForwardSamples:
    """Draw ``S`` aligned samples of every node's latent through the DAG.

    Standard-normal noise is drawn per node in topological order with shape
    ``(S, L, N)``.  ``zero_noise`` propagates posterior means instead.
    ``nodes`` restricts the pass to those nodes and their ancestors;
    ``priors`` (if given) is filled with each node's inducing prior.
    """
    if S < 1:
        raise ValueError("S must be at least 1")
    if rng is None and not zero_noise:
        raise ValueError("rng required unless zero_noise is set")
    order = spec.order if nodes is None else spec.closure(nodes)
    X = as_tensor(X)
    N = X.shape[0]
    out: ForwardSamples = {}
    for nid in order:
        node = spec[nid]
        st = states[nid]
        inp = node_inputs(spec, nid, X, out, S)
        prior = inducing_prior(st.variational, st.kernel, st.mean, base_jitter, nid)
        if priors is not None:
            priors[nid] = prior
        marg = marginal_q(inp, st.variational, st.kernel, st.mean, prior=prior, name=nid, whiten=node.whiten)
        L = node.n_latents
        if zero_noise:
            g = ad.broadcast(marg.mean, (S, L, N)) if marg.mean.ndim == 2 else marg.mean
        else:
            eps = rng.standard_normal((S, L, N))
            g = marg.mean + ad.sqrt(marg.var) * eps
        g = ad.transpose(g)
        mean = ad.transpose(marg.mean)
        var = ad.transpose(marg.var)
        if mean.ndim == 2:
            mean = ad.reshape(mean, (1,) + mean.shape)
            var = ad.reshape(var, (1,) + var.shape)
        if node.mixed:
            B = as_tensor(st.mixing.B)
            f = mix_outputs(g, B)
            mean = mix_outputs(mean, B)
            var = var @ ad.transpose(ad.square(B))
        else:
            f = g
        out[nid] = NodeSamples(f=f, mean=mean, var=var, latent=marg)
    return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass
class LossTerms:
    """Per-node normalised log-likelihood sums and KL divergences."""

    ll: dict[str, Tensor]
    kl: dict[str, Tensor]

    def total(self, beta: float) -> Tensor:
        loss = Tensor(0.0)
        for v in self.ll.values():
            loss = loss - v
        for v in self.kl.values():
            loss = loss + float(beta) * v
        return loss


def _node_ll(spec: GraphSpec, states: Mapping[str, NodeState], data: Dataset, nid: str,
             samples: NodeSamples, kind: str, closed_form: bool) -> Tensor:
    node = spec[nid]
    lik = node.likelihood
    if nid not in data.Y:
        raise GraphError(f"no observations bound to node {nid!r}")
    rows = np.flatnonzero(data.row_mask(nid))
    if rows.size == 0:
        raise GraphError(f"node {nid!r} has an empty observation mask")
    y = data.Y[nid][rows]
    mask = data.mask[nid][rows]
    params = states[nid].likelihood
    f = samples.f[:, rows, :]
    if kind == "pll":
        per_row = lik.log_expected_prob(params, y, f, mask)
    elif kind == "elbo":
        if closed_form and lik.is_gaussian:
            marg = MarginalGaussian(mean=samples.mean[:, rows, :], var=samples.var[:, rows, :])
            per_row = ad.mean(lik.expected_log_prob(params, y, marg, mask=mask), axis=0)
        else:
            per_row = ad.mean(lik.log_prob(params, y, f, mask), axis=0)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return ad.sum_(per_row) / node.norm


def loss_terms(spec: GraphSpec, states: Mapping[str, NodeState], data: Dataset, S: int,
               rng: np.random.Generator, *, kind: str = "elbo", ll_nodes: Iterable[str] | None = None,
               kl_nodes: Iterable[str] | None = None, closed_form: bool = False,
               ll_scale: Mapping[str, float] | None = None) -> LossTerms:
    """Evaluate the LL and KL parts of the network loss.

    ``ll_nodes`` defaults to every node with a likelihood, ``kl_nodes`` to
    those nodes plus their ancestors.  ``ll_scale`` multiplies individual node
    LL sums (minibatch correction).
    """
    ll_nodes = spec.observed_nodes() if ll_nodes is None else list(ll_nodes)
    for nid in ll_nodes:
        if spec[nid].likelihood is None:
            raise GraphError(f"node {nid!r} has no likelihood")
    kl_nodes = spec.closure(ll_nodes) if kl_nodes is None else list(kl_nodes)
    priors: dict[str, InducingPrior] = {}
    samples = forward_sample(spec, states, data.X, S, rng, nodes=ll_nodes, priors=priors) if ll_nodes else {}
    ll = {}
    for nid in ll_nodes:
        term = _node_ll(spec, states, data, nid, samples[nid], kind, closed_form)
        if ll_scale is not None and nid in ll_scale:
            term = term * float(ll_scale[nid])
        ll[nid] = term
    kl = {}
    for nid in kl_nodes:
        st = states[nid]
        kl[nid] = kl_u(st.variational, st.kernel, st.mean, prior=priors.get(nid), name=nid,
                       whiten=spec[nid].whiten)
    return LossTerms(ll=ll, kl=kl)


def elbo_loss(spec: GraphSpec, states: Mapping[str, NodeState], data: Dataset, S: int, beta: float,
              rng: np.random.Generator, **kwargs: Any) -> Tensor:
    """Negative network ELBO: ``-sum_i LL_i / alpha_i + beta sum_i KL_i``.

    Each row's expected log-likelihood is the mean over the ``S`` aligned
    samples (``closed_form=True`` swaps in the analytic Gaussian expectation).
    """
    return loss_terms(spec, states, data, S, rng, kind="elbo", **kwargs).total(beta)


def pll_loss(spec: GraphSpec, states: Mapping[str, NodeState], data: Dataset, S: int, beta: float,
             rng: np.random.Generator, **kwargs: Any) -> Tensor:
    """Negative predictive log-likelihood: LL per row is ``logsumexp_s log p - log S``."""
    return loss_terms(spec, states, data, S, rng, kind="pll", **kwargs).total(beta)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


@dataclass
class PredictiveSummary:
    """Monte-Carlo predictive moments of one node at the query rows.

    ``mean``/``var`` are ``(N, D_f)``, ``cov`` is ``(N, D_f, D_f)``.
    Gaussian nodes add ``obs_var``/``obs_cov`` (noise included); categorical
    nodes add class probabilities ``probs``.
    """

    mean: np.ndarray
    var: np.ndarray
    cov: np.ndarray
    obs_var: np.ndarray | None = None
    obs_cov: np.ndarray | None = None
    probs: np.ndarray | None = None


def _mixed_cov(samples: NodeSamples, B: np.ndarray | None) -> np.ndarray:
    v = np.swapaxes(samples.latent.var.data, -1, -2)
    if v.ndim == 2:
        v = v[None]
    if B is None:
        return v[..., :, None] * np.eye(v.shape[-1])
    return np.einsum("dl,snl,el->snde", B, v, B)


def predict(spec: GraphSpec, states: Mapping[str, NodeState], X_query: Any, S: int = 100,
            rng: np.random.Generator | None = None, *, nodes: Iterable[str] | None = None,
            zero_noise: bool = False) -> dict[str, PredictiveSummary]:
    """Per-node predictive moments by the law of total variance over ``S`` samples.

    With ``zero_noise`` every node propagates its posterior mean and reports
    zero latent variance, so Gaussian nodes carry likelihood noise only.
    """
    samples = forward_sample(spec, states, X_query, S, rng, nodes=nodes, zero_noise=zero_noise)
    wanted = set(samples) if nodes is None else set(nodes)
    out = {}
    for nid, smp in samples.items():
        if nid not in wanted:
            continue
        node = spec[nid]
        st = states[nid]
        means = np.broadcast_to(smp.mean.data, (S,) + smp.mean.shape[1:])
        B = np.asarray(as_tensor(st.mixing.B).data) if node.mixed else None
        if zero_noise:
            within_var = np.zeros(means.shape[1:])
            within_cov = np.zeros(means.shape[1:] + means.shape[-1:])
        else:
            within_var = np.broadcast_to(smp.var.data, means.shape).mean(axis=0)
            within_cov = np.broadcast_to(_mixed_cov(smp, B), means.shape + means.shape[-1:]).mean(axis=0)
        mu = means.mean(axis=0)
        centred = means - mu
        between_cov = np.einsum("snd,sne->nde", centred, centred) / S
        cov = within_cov + between_cov
        var = within_var + (centred**2).mean(axis=0)
        summary = PredictiveSummary(mean=mu, var=var, cov=cov)
        lik = node.likelihood
        if lik is not None and lik.is_gaussian:
            noise = lik.noise_var(st.likelihood).data
            summary.obs_var = var + noise
            summary.obs_cov = cov + np.diag(noise)
        elif lik is not None:
            f = smp.f.data
            if lik.kind == "bernoulli":
                p1 = (1.0 / (1.0 + np.exp(-f[..., 0]))).mean(axis=0)
                summary.probs = np.stack([1.0 - p1, p1], axis=-1)
            else:
                logits = f @ np.asarray(as_tensor(st.likelihood.W).data).T
                e = np.exp(logits - logits.max(axis=-1, keepdims=True))
                summary.probs = (e / e.sum(axis=-1, keepdims=True)).mean(axis=0)
        out[nid] = summary
    return out


def condition_gaussian(mean: Any, cov: Any, observed: Iterable[int], values: Any,
                       base_jitter: float = ad.DEFAULT_JITTER) -> tuple[np.ndarray, np.ndarray]:
    """Condition ``N(mean, cov)`` on ``x[observed] = values``.

    Returns the full-dimensional conditional; observed coordinates are pinned
    to their values with zero variance.  Leading batch axes are supported.
    """
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    b = np.asarray(list(observed), dtype=int)
    D = mean.shape[-1]
    a = np.setdiff1d(np.arange(D), b)
    values = np.asarray(values, dtype=np.float64).reshape(mean.shape[:-1] + (b.size,))
    out_mean = mean.copy()
    out_cov = np.zeros_like(cov)
    out_mean[..., b] = values
    if b.size == 0:
        return mean.copy(), cov.copy()
    S_bb = cov[..., b[:, None], b[None, :]]
    S_ab = cov[..., a[:, None], b[None, :]]
    S_aa = cov[..., a[:, None], a[None, :]]
    Lb = ad.cholesky(S_bb, base_jitter, name="conditioning block").data
    resid = (values - mean[..., b])[..., None]
    gain_t = ad._trisolve(Lb, np.swapaxes(S_ab, -1, -2), True, False)
    white = ad._trisolve(Lb, resid, True, False)
    out_mean[..., a] = mean[..., a] + (np.swapaxes(gain_t, -1, -2) @ white)[..., 0]
    out_cov[..., a[:, None], a[None, :]] = S_aa - np.swapaxes(gain_t, -1, -2) @ gain_t
    return out_mean, out_cov


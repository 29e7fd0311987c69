"""Finite-difference audit of every autodiff primitive and of whole network losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import graph
from .graph import Dataset, GraphSpec, NodeSpec
from .likelihoods import Likelihood

TOLERANCE = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < TOLERANCE)


def _spd(rng: np.random.Generator, n: int) -> np.ndarray:
    A = rng.standard_normal((n, n))
    return A @ A.T + n * np.eye(n)


def _lower(rng: np.random.Generator, n: int) -> np.ndarray:
    L = np.tril(0.3 * rng.standard_normal((n, n)))
    L[np.diag_indices(n)] = 1.0 + rng.random(n)
    return L


def _probe(rng: np.random.Generator, out_shape_of: Callable, x: np.ndarray) -> Callable:
    """Scalarise ``out_shape_of`` with a fixed random weighting so no gradient entry is trivially zero."""
    w = rng.uniform(0.5, 1.5, np.shape(out_shape_of(x).data))
    return lambda t: ad.sum_(ad.mul(out_shape_of(t), w))


def _primitive_cases(rng: np.random.Generator) -> dict[str, list[tuple[Callable, np.ndarray]]]:
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    m = rng.standard_normal((4, 2))
    spd = _spd(rng, 4)
    L = _lower(rng, 4)
    rhs = rng.standard_normal((4, 3))
    bc = rng.standard_normal((4,))

    def sym_chol(t):
        return ad.cholesky(ad.scalar_mul(ad.add(t, ad.transpose(t)), 0.5))

    return {
        "add": [(lambda t: ad.add(t, b), a), (lambda t: ad.add(a, t), bc)],
        "sub": [(lambda t: ad.sub(t, b), a), (lambda t: ad.sub(a, t), bc)],
        "mul": [(lambda t: ad.mul(t, b), a), (lambda t: ad.mul(a, t), bc)],
        "div": [(lambda t: ad.div(t, pos), a), (lambda t: ad.div(a, t), pos)],
        "scalar_mul": [(lambda t: ad.scalar_mul(t, -1.7), a)],
        "neg": [(ad.neg, a)],
        "exp": [(ad.exp, a)],
        "log": [(ad.log, pos)],
        "softplus": [(ad.softplus, a)],
        "square": [(ad.square, a)],
        "sqrt": [(ad.sqrt, pos)],
        "clamp_min": [(lambda t: ad.clamp_min(t, 0.01), pos)],
        "matmul": [(lambda t: ad.matmul(t, m), a), (lambda t: ad.matmul(a, t), m)],
        "transpose": [(ad.transpose, a)],
        "reshape": [(lambda t: ad.reshape(t, (2, 6)), a)],
        "sum": [(lambda t: ad.sum_(t, axis=0, keepdims=True), a)],
        "mean": [(lambda t: ad.mean(t, axis=1), a)],
        "slice": [(lambda t: ad.slice_(t, (slice(0, 2), [1, 3])), a)],
        "concat": [(lambda t: ad.concat([t, b], axis=0), a)],
        "broadcast": [(lambda t: ad.broadcast(t, (2, 3, 4)), a)],
        "logsumexp": [(lambda t: ad.logsumexp(t, axis=1), a)],
        "softmax": [(lambda t: ad.softmax(t, axis=-1), a)],
        "cholesky": [(sym_chol, spd)],
        "triangular_solve": [
            (lambda t: ad.triangular_solve(L, t), rhs),
            (lambda t: ad.triangular_solve(L, t, trans=True), rhs),
            (lambda t: ad.triangular_solve(ad.add(ad.mul(t, np.tril(np.ones((4, 4)))), 0.0), rhs), L),
        ],
    }


def check_primitives(seed: int = 0) -> list[CheckResult]:
    """One result per registered primitive: the worst relative error over its probes."""
    rng = np.random.default_rng(seed)
    cases = _primitive_cases(rng)
    missing = set(ad.primitive_names()) - set(cases)
    if missing:
        raise RuntimeError(f"no gradient probe for primitives {sorted(missing)}")
    results = []
    for name in ad.primitive_names():
        worst = 0.0
        for fn, x in cases[name]:
            try:
                err = ad.finite_difference_check(_probe(rng, fn, x), x)
            except ad.NonFiniteError:
                err = float("inf")
            worst = max(worst, err)
        results.append(CheckResult(name, worst))
    return results


def toy_network(seed: int = 0, n: int = 8, M: int = 4) -> tuple[GraphSpec, dict, Dataset]:
    """Three-node chain (Gaussian, Bernoulli, Gaussian) with small random parameters."""
    from .training import init_states

    rng = np.random.default_rng(seed)
    spec = GraphSpec([
        NodeSpec("a", inputs=(0,), num_inducing=M, likelihood=Likelihood("gaussian")),
        NodeSpec("b", parents=("a",), inputs=(0,), num_inducing=M, likelihood=Likelihood("bernoulli")),
        NodeSpec("c", parents=("a", "b"), inputs=(0,), num_inducing=M, likelihood=Likelihood("gaussian")),
    ])
    x = np.linspace(0.0, 1.0, n)
    data = Dataset(X=x, Y={
        "a": np.sin(4 * x) + 0.1 * rng.standard_normal(n),
        "b": (x > 0.5).astype(float),
        "c": np.cos(3 * x) + 0.1 * rng.standard_normal(n),
    })
    states = init_states(spec, data, seed)
    # move off the prior so every variational entry carries gradient
    flat = graph.flatten_states(states)
    perturbed = {k: v + 0.05 * rng.standard_normal(np.shape(v)) for k, v in flat.items()
                 if k.endswith("/m_u") or k.endswith("/raw_L_S")}
    return spec, graph.rebuild_states(states, perturbed), data


def check_network_loss(kind: str, seed: int = 0, S: int = 3, beta: float = 0.7) -> CheckResult:
    """Relative FD error of the full ``kind`` loss w.r.t. all parameters of the toy network."""
    spec, states, data = toy_network(seed)
    flat = graph.flatten_states(states)
    names = sorted(flat)
    shapes = [np.shape(flat[k]) for k in names]
    sizes = [int(np.prod(s)) for s in shapes]
    x0 = np.concatenate([np.ravel(flat[k]) for k in names])
    loss = graph.elbo_loss if kind == "elbo" else graph.pll_loss

    def fn(vec):
        values, start = {}, 0
        for k, shape, size in zip(names, shapes, sizes):
            values[k] = ad.reshape(ad.slice_(vec, slice(start, start + size)), shape)
            start += size
        st = graph.rebuild_states(states, values)
        return loss(spec, st, data, S, beta, np.random.default_rng(seed + 1))

    return CheckResult(f"{kind}_loss", ad.finite_difference_check(fn, x0))


def run_all(seed: int = 0) -> list[CheckResult]:
    return check_primitives(seed) + [check_network_loss("elbo", seed), check_network_loss("pll", seed)]


def worst(results: list[CheckResult]) -> CheckResult:
    """The result to blame: a failing primitive outranks the composite losses built on it."""
    prims = set(ad.primitive_names())
    failing = [r for r in results if not r.ok and r.name in prims]
    pool = failing or results
    return max(pool, key=lambda r: (not np.isfinite(r.error), r.error))

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pogpn import autodiff as ad
from pogpn import graph
from pogpn.graph import Dataset, GraphError, GraphSpec, NodeSamples, NodeSpec, condition_gaussian, topological_sort
from pogpn.likelihoods import Likelihood
from pogpn.svgp import VAR_FLOOR, marginal_q, sample_marginal
from pogpn.training import init_states

G = Likelihood("gaussian")


def perturb(states, seed, scale=0.3):
    r = np.random.default_rng(seed)
    flat = graph.flatten_states(states)
    upd = {k: v + scale * r.standard_normal(np.shape(v)) for k, v in flat.items()
           if k.endswith("/m_u") or k.endswith("/raw_L_S")}
    return graph.rebuild_states(states, upd)


def branching_dag(observed=("4", "5")):
    lik = {n: G for n in observed}
    return GraphSpec([
        NodeSpec("1", inputs=(0,), num_inducing=5, likelihood=lik.get("1")),
        NodeSpec("2", parents=("1",), num_inducing=5, likelihood=lik.get("2")),
        NodeSpec("3", parents=("2",), num_inducing=5, likelihood=lik.get("3")),
        NodeSpec("4", parents=("1",), num_inducing=5, likelihood=lik.get("4")),
        NodeSpec("5", parents=("2", "4"), num_inducing=5, likelihood=lik.get("5")),
    ])


def toy_data(N=12, nodes=("4", "5"), seed=0):
    r = np.random.default_rng(seed)
    x = np.linspace(-1, 1, N)
    return Dataset(X=x, Y={n: np.sin(3 * x + i) + 0.1 * r.standard_normal(N) for i, n in enumerate(nodes)})


# --- ordering ---------------------------------------------------------------


def test_chain_order():
    spec = [NodeSpec("1", inputs=(0,)), NodeSpec("2", parents=("1",)), NodeSpec("3", parents=("2",))]
    assert topological_sort(spec) == ["1", "2", "3"]


def test_declaration_order_breaks_ties():
    spec = [NodeSpec("b", inputs=(0,)), NodeSpec("a", inputs=(0,)), NodeSpec("c", parents=("a", "b"))]
    assert topological_sort(spec) == ["b", "a", "c"]


def test_cycle_named():
    with pytest.raises(GraphError, match="cycle"):
        GraphSpec([NodeSpec("a", parents=("b",), inputs=(0,)), NodeSpec("b", parents=("a",))])


def test_unknown_parent_and_duplicates():
    with pytest.raises(GraphError):
        GraphSpec([NodeSpec("a", parents=("zz",))])
    with pytest.raises(GraphError):
        GraphSpec([NodeSpec("a", inputs=(0,)), NodeSpec("a", inputs=(0,))])


def test_branching_order_and_closure():
    spec = branching_dag()
    order = spec.order
    pos = {n: i for i, n in enumerate(order)}
    assert pos["1"] < pos["2"] and pos["1"] < pos["4"]
    assert pos["2"] < pos["3"] and pos["2"] < pos["5"]
    assert pos["4"] < pos["5"]
    assert set(spec.closure(["4", "5"])) == {"1", "2", "4", "5"}


@settings(max_examples=50)
@given(st.integers(2, 8), st.integers(0, 10**6))
def test_random_dag_order_respects_edges(n, seed):
    r = np.random.default_rng(seed)
    perm = r.permutation(n)
    nodes = []
    for k in range(n):
        parents = tuple(str(perm[j]) for j in range(k) if r.random() < 0.4)
        nodes.append(NodeSpec(str(perm[k]), parents=parents, inputs=() if parents else (0,)))
    order = topological_sort(nodes)
    pos = {v: i for i, v in enumerate(order)}
    for node in nodes:
        for p in node.parents:
            assert pos[p] < pos[node.id]


# --- forward sampling -------------------------------------------------------


def test_single_root_matches_plain_svgp():
    spec = GraphSpec([NodeSpec("a", inputs=(0,), num_inducing=6, likelihood=G)])
    data = toy_data(nodes=("a",))
    st_ = perturb(init_states(spec, data, 0, lengthscale=0.3), 1)
    out = graph.forward_sample(spec, st_, data.X, 4, np.random.default_rng(7))
    s = st_["a"]
    marg = marginal_q(data.X, s.variational, s.kernel, s.mean)
    eps = np.random.default_rng(7).standard_normal((4, 1, data.num_rows))
    ref = sample_marginal(marg, eps).data
    np.testing.assert_array_equal(out["a"].f.data[..., 0], ref[:, 0, :])


def test_zero_noise_is_deterministic_mean_pass():
    spec = branching_dag()
    data = toy_data()
    st_ = perturb(init_states(spec, data, 0, lengthscale=0.3), 2)
    a = graph.forward_sample(spec, st_, data.X, 1, None, zero_noise=True)
    b = graph.forward_sample(spec, st_, data.X, 1, np.random.default_rng(3), zero_noise=True)
    for n in spec.ids:
        np.testing.assert_array_equal(a[n].f.data, b[n].f.data)
    np.testing.assert_array_equal(a["1"].f.data[0], a["1"].mean.data[0])


def test_shared_sample_index_threads_through():
    spec = branching_dag()
    data = toy_data()
    st_ = perturb(init_states(spec, data, 0, lengthscale=0.3), 3)
    S = 5
    out = graph.forward_sample(spec, st_, data.X, S, np.random.default_rng(9))
    # node 5's per-sample mean is a function of draw s of nodes 2 and 4
    s5 = st_["5"]
    for s in range(S):
        inp = np.concatenate([out["2"].f.data[s], out["4"].f.data[s]], axis=-1)
        m = marginal_q(inp, s5.variational, s5.kernel, s5.mean).mean.data[0]
        np.testing.assert_allclose(out["5"].mean.data[s, :, 0], m, rtol=1e-12)


def test_chain_moments_match_dgp_oracle():
    spec = GraphSpec([NodeSpec("h", inputs=(0,), num_inducing=5),
                      NodeSpec("y", parents=("h",), num_inducing=5, likelihood=G)])
    data = toy_data(N=3, nodes=("y",))
    st_ = perturb(init_states(spec, data, 0, lengthscale=0.3), 4)
    S = 10**5
    out = graph.forward_sample(spec, st_, data.X, S, np.random.default_rng(0))
    l1, l2 = oracles.Layer(st_["h"]), oracles.Layer(st_["y"])
    r = np.random.default_rng(12345)
    _, f2 = oracles.dgp_forward(l1, l2, data.X, r.standard_normal((S, 3)), r.standard_normal((S, 3)))
    ours = out["y"].f.data[..., 0]
    se = np.sqrt(ours.var(0) / S + f2.var(0) / S)
    assert np.all(np.abs(ours.mean(0) - f2.mean(0)) < 4 * se)
    se_var = np.sqrt(2.0 / S) * (ours.var(0) + f2.var(0)) / 2 * 2
    assert np.all(np.abs(ours.var(0) - f2.var(0)) < 4 * se_var)


# --- losses -------------------------------------------------------------------


def single_node(seed=0, N=10, M=6):
    spec = GraphSpec([NodeSpec("a", inputs=(0,), num_inducing=M, likelihood=G)])
    data = toy_data(N=N, nodes=("a",), seed=seed)
    return spec, perturb(init_states(spec, data, seed, lengthscale=0.3), seed + 10), data


def test_single_node_elbo_matches_oracle():
    spec, st_, data = single_node()
    S = 7
    loss = graph.elbo_loss(spec, st_, data, S, 1.0, np.random.default_rng(5)).item()
    eps = np.random.default_rng(5).standard_normal((S, 1, data.num_rows))[:, 0, :]
    noise = float(oracles.softplus(st_["a"].likelihood.raw_noise)[0])
    ref = oracles.svgp_elbo(oracles.Layer(st_["a"]), data.X, data.Y["a"][:, 0], noise, eps)
    assert loss == pytest.approx(-ref, abs=1e-8)


def test_beta_zero_is_pure_ll():
    spec, st_, data = single_node()
    terms = graph.loss_terms(spec, st_, data, 5, np.random.default_rng(1))
    loss = graph.elbo_loss(spec, st_, data, 5, 0.0, np.random.default_rng(1)).item()
    assert loss == -sum(v.item() for v in terms.ll.values())


def test_removing_likelihood_only_drops_its_ll():
    spec = branching_dag(("4", "5"))
    data = toy_data()
    st_ = perturb(init_states(spec, data, 0, lengthscale=0.3), 5)
    full = graph.loss_terms(spec, st_, data, 4, np.random.default_rng(2), ll_nodes=["4", "5"],
                            kl_nodes=["1", "2", "4", "5"])
    part = graph.loss_terms(spec, st_, data, 4, np.random.default_rng(2), ll_nodes=["5"],
                            kl_nodes=["1", "2", "4", "5"])
    assert set(part.ll) == {"5"}
    for n in full.kl:
        assert full.kl[n].item() == part.kl[n].item()
    assert full.ll["5"].item() == part.ll["5"].item()


def test_pll_equals_elbo_at_one_sample():
    spec = branching_dag()
    data = toy_data()
    st_ = perturb(init_states(spec, data, 0, lengthscale=0.3), 6)
    a = graph.pll_loss(spec, st_, data, 1, 0.7, np.random.default_rng(3)).item()
    b = graph.elbo_loss(spec, st_, data, 1, 0.7, np.random.default_rng(3)).item()
    assert a == b


def test_pll_two_sample_hand_values():
    s2 = 1.0 / (2 * math.pi)
    spec = GraphSpec([NodeSpec("a", inputs=(0,), num_inducing=2, likelihood=G, alpha=2.0)])
    data = Dataset(X=np.zeros((1, 1)), Y={"a": np.zeros(1)})
    st_ = init_states(spec, data, 0, lengthscale=0.3)
    st_ = graph.rebuild_states(st_, {"a/likelihood/raw_noise": np.array([math.log(math.expm1(s2))])})
    d = math.sqrt(4 * s2)
    f = ad.as_tensor(np.array([[[0.0]], [[d]]]))
    smp = NodeSamples(f=f, mean=f, var=ad.as_tensor(np.zeros((2, 1, 1))), latent=None)
    ll = graph._node_ll(spec, st_, data, "a", smp, "pll", False).item()
    assert ll == pytest.approx(-0.566219 / 2.0, abs=1e-6)


def test_alpha_rescales_only_its_node():
    base = branching_dag()
    data = toy_data()
    st_ = perturb(init_states(base, data, 0, lengthscale=0.3), 7)

    def terms(alpha4):
        nodes = [NodeSpec(n.id, parents=n.parents, inputs=n.inputs, num_inducing=5, likelihood=n.likelihood,
                          alpha=alpha4 if n.id == "4" else None) for n in base.nodes]
        return graph.loss_terms(GraphSpec(nodes), st_, data, 3, np.random.default_rng(0))

    t1, t2 = terms(1.0), terms(4.0)
    assert t2.ll["4"].item() == pytest.approx(t1.ll["4"].item() / 4.0, rel=1e-14)
    assert t2.ll["5"].item() == t1.ll["5"].item()
    # d loss / d(1/alpha_4) equals minus the raw LL sum, by central differences
    h = 1e-4
    lp = -sum(v.item() for v in terms(1.0 / (1.0 + h)).ll.values())
    lm = -sum(v.item() for v in terms(1.0 / (1.0 - h)).ll.values())
    assert (lp - lm) / (2 * h) == pytest.approx(-t1.ll["4"].item(), rel=1e-6)


def test_default_alpha_is_output_dim():
    assert NodeSpec("a", inputs=(0,), latent_dim=3, likelihood=Likelihood("multitask-gaussian", 3)).norm == 3.0
    assert NodeSpec("a", inputs=(0,), likelihood=G, alpha=0.5).norm == 0.5


def test_masked_entries_do_not_matter():
    spec = branching_dag()
    data = toy_data()
    st_ = perturb(init_states(spec, data, 0, lengthscale=0.3), 8)
    Y5 = data.Y["5"].copy()
    mask = np.ones_like(Y5, dtype=bool)
    mask[::3] = False
    d1 = Dataset(X=data.X, Y={"4": data.Y["4"], "5": Y5}, mask={"4": data.mask["4"], "5": mask})
    Y5b = Y5.copy()
    Y5b[::3] = 1e6
    d2 = Dataset(X=data.X, Y={"4": data.Y["4"], "5": Y5b}, mask={"4": data.mask["4"], "5": mask})
    a = graph.pll_loss(spec, st_, d1, 3, 1.0, np.random.default_rng(0)).item()
    b = graph.pll_loss(spec, st_, d2, 3, 1.0, np.random.default_rng(0)).item()
    assert a == b


def test_empty_mask_raises():
    spec, st_, data = single_node()
    empty = Dataset(X=data.X, Y=data.Y, mask={"a": np.zeros_like(data.mask["a"])})
    with pytest.raises(GraphError, match="empty"):
        graph.elbo_loss(spec, st_, empty, 2, 1.0, np.random.default_rng(0))


def test_closed_form_close_to_mc_for_gaussian():
    spec, st_, data = single_node()
    cf = graph.elbo_loss(spec, st_, data, 1, 1.0, np.random.default_rng(0), closed_form=True).item()
    mc = [graph.elbo_loss(spec, st_, data, 2000, 1.0, np.random.default_rng(s)).item() for s in range(16)]
    assert abs(np.mean(mc) - cf) < 4 * np.std(mc) / np.sqrt(len(mc))


def test_loss_is_bitwise_reproducible():
    spec = branching_dag()
    data = toy_data()
    st_ = perturb(init_states(spec, data, 0, lengthscale=0.3), 9)
    vals = {graph.pll_loss(spec, st_, data, 5, 0.5, np.random.default_rng(42)).item() for _ in range(3)}
    assert len(vals) == 1


@settings(max_examples=100)
@given(st.integers(0, 10**6))
def test_pll_ll_dominates_elbo_ll_on_random_graphs(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 5))
    nodes = []
    kinds = ["gaussian", "bernoulli", "softmax"]
    for k in range(n):
        parents = tuple(f"n{j}" for j in range(k) if r.random() < 0.5)
        kind = kinds[int(r.integers(0, 3))]
        lik = Likelihood(kind, num_classes=3) if kind == "softmax" else Likelihood(kind)
        nodes.append(NodeSpec(f"n{k}", parents=parents, inputs=(0,), num_inducing=4, likelihood=lik))
    spec = GraphSpec(nodes)
    N = 6
    x = r.uniform(-1, 1, N)
    Y = {}
    for node in nodes:
        if node.likelihood.kind == "gaussian":
            Y[node.id] = r.standard_normal(N)
        else:
            Y[node.id] = r.integers(0, 2 if node.likelihood.kind == "bernoulli" else 3, N).astype(float)
    data = Dataset(X=x, Y=Y)
    st_ = perturb(init_states(spec, data, seed % 1000, lengthscale=0.3), seed)
    e = graph.loss_terms(spec, st_, data, 20, np.random.default_rng(seed), kind="elbo")
    p = graph.loss_terms(spec, st_, data, 20, np.random.default_rng(seed), kind="pll")
    for nid in e.ll:
        assert p.ll[nid].item() >= e.ll[nid].item() - 1e-10


def test_cost_scaling_in_inducing_count():
    x = np.linspace(0, 1, 150)
    data = Dataset(X=x, Y={"a": np.sin(6 * x)})

    def step_time(M):
        spec = GraphSpec([NodeSpec("a", inputs=(0,), num_inducing=M, likelihood=G)])
        st_ = init_states(spec, data, 0, lengthscale=0.3)
        names = sorted(graph.flatten_states(st_))
        flat = graph.flatten_states(st_)

        def fn(*vals):
            return graph.elbo_loss(spec, graph.rebuild_states(st_, dict(zip(names, vals))), data, 5, 1.0,
                                   np.random.default_rng(0))

        times = []
        for _ in range(5):
            t0 = time.perf_counter()
            ad.value_and_grad(fn, *[flat[k] for k in names])
            times.append(time.perf_counter() - t0)
        return float(np.median(times))

    t1, t2 = step_time(30), step_time(60)
    assert t2 / t1 <= 8.0


# --- prediction -------------------------------------------------------------


def test_predict_single_node_matches_marginal():
    spec, st_, data = single_node()
    Xq = np.linspace(-1, 1, 7)[:, None]
    p = graph.predict(spec, st_, Xq, 10**4, np.random.default_rng(0))["a"]
    s = st_["a"]
    q = marginal_q(Xq, s.variational, s.kernel, s.mean)
    np.testing.assert_allclose(p.mean[:, 0], q.mean.data[0], rtol=1e-12)
    np.testing.assert_allclose(p.var[:, 0], q.var.data[0], rtol=1e-12)
    noise = oracles.softplus(s.likelihood.raw_noise)
    np.testing.assert_allclose(p.obs_var[:, 0], q.var.data[0] + noise, rtol=1e-12)


def test_predict_chain_law_of_total_variance():
    spec = branching_dag()
    data = toy_data()
    st_ = perturb(init_states(spec, data, 0, lengthscale=0.3), 11)
    S = 50
    p = graph.predict(spec, st_, data.X, S, np.random.default_rng(4))["5"]
    smp = graph.forward_sample(spec, st_, data.X, S, np.random.default_rng(4))["5"]
    m, v = smp.mean.data[..., 0], smp.var.data[..., 0]
    np.testing.assert_allclose(p.mean[:, 0], m.mean(0), rtol=1e-12)
    np.testing.assert_allclose(p.var[:, 0], v.mean(0) + m.var(0), rtol=1e-10)


def test_predict_zero_variance_state():
    spec, st_, data = single_node()
    M = st_["a"].variational.raw_L_S.shape[-1]
    st_ = graph.rebuild_states(st_, {"a/kernel/raw_outputscale": np.array([-60.0]),
                                     "a/variational/raw_L_S": np.full((1, M, M), -60.0) * np.eye(M)})
    p = graph.predict(spec, st_, data.X, 20, np.random.default_rng(0))["a"]
    # collapses onto the variance floor, stays finite, and the mean is the constant mean
    np.testing.assert_allclose(p.var, VAR_FLOOR)
    assert np.all(np.isfinite(p.mean))


def test_predict_zero_noise_drops_latent_variance():
    spec, st_, data = single_node()
    p = graph.predict(spec, st_, data.X, 1, None, zero_noise=True)["a"]
    assert np.all(p.var == 0.0)
    noise = oracles.softplus(st_["a"].likelihood.raw_noise)
    np.testing.assert_allclose(p.obs_var[:, 0], noise[0])


def test_predict_is_reproducible():
    spec = branching_dag()
    data = toy_data()
    st_ = perturb(init_states(spec, data, 0, lengthscale=0.3), 12)
    a = graph.predict(spec, st_, data.X, 30, np.random.default_rng(1))
    b = graph.predict(spec, st_, data.X, 30, np.random.default_rng(1))
    for n in a:
        assert a[n].mean.tobytes() == b[n].mean.tobytes()
        assert a[n].cov.tobytes() == b[n].cov.tobytes()


def test_predict_multitask_cov_has_cross_terms():
    spec = GraphSpec([NodeSpec("m", inputs=(0,), latent_dim=2, num_latents=1, num_inducing=4,
                               likelihood=Likelihood("multitask-gaussian", 2))])
    data = Dataset(X=np.linspace(0, 1, 5), Y={"m": np.zeros((5, 2))})
    st_ = init_states(spec, data, 0, lengthscale=0.3)
    p = graph.predict(spec, st_, data.X, 10, np.random.default_rng(0))["m"]
    B = st_["m"].mixing.B
    np.testing.assert_allclose(p.cov[:, 0, 1], B[0, 0] * B[1, 0] * p.cov[:, 0, 0] / B[0, 0] ** 2, rtol=1e-10)


# --- conditioning ----------------------------------------------------------


def test_condition_independent():
    m, c = condition_gaussian([0.5, -1.0], [[2.0, 0.0], [0.0, 3.0]], [1], [4.0])
    assert m[0] == 0.5 and c[0, 0] == pytest.approx(2.0)


@pytest.mark.parametrize("rho", [0.0, 0.3, -0.8])
def test_condition_bivariate(rho):
    m, c = condition_gaussian([0.0, 0.0], [[1.0, rho], [rho, 1.0]], [1], [1.0], base_jitter=0.0)
    assert m[0] == pytest.approx(rho, abs=1e-12)
    assert c[0, 0] == pytest.approx(1 - rho**2, abs=1e-12)


def test_condition_own_index_pins_value():
    m, c = condition_gaussian([0.0, 1.0, 2.0], np.eye(3) + 0.2, [0], [5.0])
    assert m[0] == 5.0 and c[0, 0] == 0.0 and np.all(c[0] == 0.0)


def test_condition_batched_matches_loop(rng):
    B = rng.standard_normal((4, 3, 3))
    cov = B @ np.swapaxes(B, -1, -2) + np.eye(3)
    mean = rng.standard_normal((4, 3))
    vals = rng.standard_normal((4, 2))
    m, c = condition_gaussian(mean, cov, [0, 2], vals, base_jitter=0.0)
    for i in range(4):
        S = cov[i]
        gain = S[1, [0, 2]] @ np.linalg.inv(S[np.ix_([0, 2], [0, 2])])
        assert m[i, 1] == pytest.approx(mean[i, 1] + gain @ (vals[i] - mean[i, [0, 2]]), rel=1e-10)
        assert c[i, 1, 1] == pytest.approx(S[1, 1] - gain @ S[[0, 2], 1], rel=1e-10)

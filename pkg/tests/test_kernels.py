import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pogpn import autodiff as ad
from pogpn.kernels import (ConstantMeanParams, MixingMatrix, SEKernelParams, constant_mean, inv_softplus,
                           kernel_diag, mix_outputs, se_kernel)


def params(ls, os=1.0, batch=()):
    ls = np.atleast_1d(np.asarray(ls, dtype=float))
    return SEKernelParams(raw_lengthscales=np.broadcast_to(inv_softplus(ls), batch + ls.shape).copy(),
                          raw_outputscale=np.full(batch, inv_softplus(os)))


def loop_kernel(X, X2, ls, os):
    K = np.empty((len(X), len(X2)))
    for i, a in enumerate(X):
        for j, b in enumerate(X2):
            K[i, j] = os * math.exp(-0.5 * sum(((a[d] - b[d]) / ls[d]) ** 2 for d in range(len(ls))))
    return K


def test_zero_distance_gives_outputscale():
    K = se_kernel(np.array([[0.3, -1.0]]), np.array([[0.3, -1.0]]), params([0.5, 2.0], os=2.7)).data
    assert K[0, 0] == pytest.approx(2.7, rel=1e-12)


def test_huge_lengthscale_is_constant(rng):
    p = SEKernelParams(raw_lengthscales=np.full(2, 1e8), raw_outputscale=np.array(inv_softplus(1.3)))
    K = se_kernel(rng.standard_normal((4, 2)), rng.standard_normal((3, 2)), p).data
    np.testing.assert_allclose(K, 1.3, rtol=1e-10)


def test_unit_distance_value():
    K = se_kernel(np.array([[0.0]]), np.array([[1.0]]), params([1.0])).data
    assert K[0, 0] == pytest.approx(0.606531, abs=1e-6)


def test_matches_loop_oracle_ard(rng):
    X, X2 = rng.standard_normal((5, 3)), rng.standard_normal((4, 3))
    ls, os = np.array([0.4, 1.1, 2.5]), 1.7
    np.testing.assert_allclose(se_kernel(X, X2, params(ls, os)).data, loop_kernel(X, X2, ls, os), rtol=1e-12)


def test_batched_latents_share_inputs(rng):
    X = rng.standard_normal((4, 2))
    p = SEKernelParams(raw_lengthscales=inv_softplus(np.array([[0.5, 1.0], [2.0, 0.3]])),
                       raw_outputscale=inv_softplus(np.array([1.0, 2.0])))
    K = se_kernel(X, X, p).data
    assert K.shape == (2, 4, 4)
    np.testing.assert_allclose(K[1], loop_kernel(X, X, [2.0, 0.3], 2.0), rtol=1e-12)
    np.testing.assert_allclose(kernel_diag(X, p).data, [[1.0] * 4, [2.0] * 4])


def test_input_dim_mismatch():
    with pytest.raises(ad.ShapeError):
        se_kernel(np.ones((2, 2)), np.ones((2, 3)), params([1.0, 1.0]))


def test_constant_mean_values_and_gradient():
    X = np.zeros((3, 1))
    np.testing.assert_array_equal(constant_mean(X, ConstantMeanParams(np.array(0.0))).data, np.zeros(3))
    np.testing.assert_array_equal(constant_mean(X, ConstantMeanParams(np.array(2.5))).data, [2.5] * 3)
    _, (g,) = ad.value_and_grad(lambda c: ad.sum_(constant_mean(X, ConstantMeanParams(c))), np.array(0.7))
    assert float(g) == pytest.approx(3.0)
    fd = ad.finite_difference_check(lambda c: ad.sum_(constant_mean(X, ConstantMeanParams(c))), np.array(0.7))
    assert fd < 1e-8


def test_mix_identity_and_duplication(rng):
    G = rng.standard_normal((2, 5, 3))
    np.testing.assert_array_equal(mix_outputs(G, MixingMatrix(np.eye(3))).data, G)
    G1 = rng.standard_normal((2, 5, 1))
    out = mix_outputs(G1, MixingMatrix(np.array([[1.0], [1.0]]))).data
    np.testing.assert_array_equal(out[..., 0], out[..., 1])
    np.testing.assert_array_equal(out[..., :1], G1)


def test_mix_matches_loop(rng):
    G, B = rng.standard_normal((3, 4, 2)), rng.standard_normal((5, 2))
    out = mix_outputs(G, B).data
    for s in range(3):
        for n in range(4):
            np.testing.assert_allclose(out[s, n], B @ G[s, n], rtol=1e-13)


def test_mix_dim_mismatch():
    with pytest.raises(ad.ShapeError):
        mix_outputs(np.ones((1, 2, 3)), np.ones((2, 2)))


small = st.floats(-2, 2, allow_nan=False)


@given(arrays(np.float64, (6, 2), elements=small), st.floats(0.1, 3.0), st.floats(0.2, 3.0))
def test_kernel_psd_up_to_jitter(X, ls, os):
    K = se_kernel(X, X, params([ls, ls], os)).data + 1e-8 * np.eye(6)
    ad.cholesky(K, base_jitter=0.0)


@given(arrays(np.float64, (4, 2), elements=small), arrays(np.float64, (3, 2), elements=small))
def test_kernel_swap_symmetry(X, X2):
    p = params([0.7, 1.4], 1.2)
    np.testing.assert_allclose(se_kernel(X, X2, p).data, se_kernel(X2, X, p).data.T, atol=1e-12)


@given(arrays(np.float64, (2, 3, 2), elements=small), arrays(np.float64, (2, 3, 2), elements=small),
       st.floats(-3, 3), st.floats(-3, 3))
def test_mix_is_linear(G1, G2, a, b):
    B = np.array([[1.0, -0.5], [0.3, 2.0], [0.0, 1.0]])
    lhs = mix_outputs(a * G1 + b * G2, B).data
    rhs = a * mix_outputs(G1, B).data + b * mix_outputs(G2, B).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)

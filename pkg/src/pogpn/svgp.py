"""Sparse variational GP layer.

Each layer holds ``L`` independent latent GPs that share inducing locations
``Z``.  The variational distribution of latent ``l`` is ``N(m_u[l], S_u[l])``
with ``S_u = L_S L_S^T``; the diagonal of ``L_S`` is softplus-constrained.

By default ``(m_u, L_S)`` describe ``u`` directly.  With ``whiten=True`` they
describe ``v`` where ``u = m(Z) + chol(K(Z, Z)) v``, which keeps Adam well
conditioned when ``K(Z, Z)`` is nearly singular.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .kernels import ConstantMeanParams, SEKernelParams, constant_mean, inv_softplus, kernel_diag, se_kernel

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-12


class _ClampCounter:
    """Counts marginal variances that had to be clamped to ``VAR_FLOOR``."""

    def __init__(self) -> None:
        self.count = 0

    def record(self, var: np.ndarray) -> None:
        n = int(np.count_nonzero(var < VAR_FLOOR))
        if n:
            self.count += n
            logger.debug("clamped %d marginal variances to %g", n, VAR_FLOOR)


variance_clamps = _ClampCounter()


@dataclass
class VariationalState:
    Z: Any
    m_u: Any
    raw_L_S: Any

    @classmethod
    def init(cls, Z: np.ndarray, num_latents: int = 1) -> VariationalState:
        M = Z.shape[0]
        raw = np.zeros((num_latents, M, M))
        raw[:, np.arange(M), np.arange(M)] = inv_softplus(1.0)
        return cls(Z=np.array(Z, dtype=np.float64), m_u=np.zeros((num_latents, M)), raw_L_S=raw)

    @classmethod
    def from_moments(cls, Z: np.ndarray, m_u: np.ndarray, L_S: np.ndarray) -> VariationalState:
        """Build the raw parameterisation for a given mean and lower Cholesky factor."""
        L_S = np.array(L_S, dtype=np.float64)
        M = L_S.shape[-1]
        raw = np.tril(L_S)
        idx = np.arange(M)
        raw[..., idx, idx] = inv_softplus(L_S[..., idx, idx])
        return cls(Z=np.array(Z, dtype=np.float64), m_u=np.array(m_u, dtype=np.float64), raw_L_S=raw)

    @property
    def num_inducing(self) -> int:
        return as_tensor(self.Z).shape[0]

    def L_S(self) -> Tensor:
        raw = as_tensor(self.raw_L_S)
        M = raw.shape[-1]
        lower = np.tril(np.ones((M, M)), -1)
        return raw * lower + ad.softplus(raw) * np.eye(M)

    def log_diag_L_S(self) -> Tensor:
        return ad.log(ad.softplus(ad.diagonal(as_tensor(self.raw_L_S))))


@dataclass
class MarginalGaussian:
    """Per-point Gaussian marginals; leading axes index samples/latents."""

    mean: Tensor
    var: Tensor
    cov: Tensor | None = None


@dataclass
class InducingPrior:
    """Cholesky factor of ``K(Z, Z)`` and the prior mean at ``Z``."""

    chol: Tensor
    mean: Tensor


def inducing_prior(state: VariationalState, kernel: SEKernelParams, mean: ConstantMeanParams,
                   base_jitter: float = ad.DEFAULT_JITTER, name: str | None = None) -> InducingPrior:
    Z = as_tensor(state.Z)
    Kzz = se_kernel(Z, Z, kernel)
    return InducingPrior(chol=ad.cholesky(Kzz, base_jitter, name), mean=constant_mean(Z, mean))


def marginal_q(X: Any, state: VariationalState, kernel: SEKernelParams, mean: ConstantMeanParams,
               *, full_cov: bool = False, prior: InducingPrior | None = None,
               base_jitter: float = ad.DEFAULT_JITTER, name: str | None = None,
               whiten: bool = False) -> MarginalGaussian:
    """Marginals of ``q(f) = E_q(u) p(f | u)`` at ``X``.

    ``X`` is ``(N, D)`` or ``(S, N, D)``; outputs are ``(L, N)`` or
    ``(S, L, N)`` for a layer with ``L`` latents (covariances add a trailing
    ``N`` axis).
    """
    X = as_tensor(X)
    Z = as_tensor(state.Z)
    if X.shape[-1] != Z.shape[-1]:
        raise ad.ShapeError(f"marginal_q: inputs have {X.shape[-1]} columns, Z has {Z.shape[-1]}")
    if prior is None:
        prior = inducing_prior(state, kernel, mean, base_jitter, name)
    Xb = X if X.ndim == 2 else ad.reshape(X, X.shape[:-2] + (1,) + X.shape[-2:])
    Kzx = se_kernel(Z, Xb, kernel)
    W = ad.triangular_solve(prior.chol, Kzx, lower=True)
    if whiten:
        A = W
        delta = as_tensor(state.m_u)
    else:
        A = ad.triangular_solve(prior.chol, W, lower=True, trans=True)
        delta = as_tensor(state.m_u) - prior.mean
    delta = ad.reshape(delta, delta.shape + (1,))
    mu = constant_mean(Xb, mean) + ad.sum_(A * delta, axis=-2)
    SA = ad.transpose(state.L_S()) @ A
    if full_cov:
        Kxx = se_kernel(Xb, Xb, kernel)
        cov = Kxx - ad.transpose(W) @ W + ad.transpose(SA) @ SA
        var = ad.diagonal(cov)
    else:
        cov = None
        var = kernel_diag(Xb, kernel) - ad.sum_(ad.square(W), axis=-2) + ad.sum_(ad.square(SA), axis=-2)
    variance_clamps.record(var.data)
    return MarginalGaussian(mean=mu, var=ad.clamp_min(var, VAR_FLOOR), cov=cov)


def kl_u(state: VariationalState, kernel: SEKernelParams, mean: ConstantMeanParams,
         *, prior: InducingPrior | None = None, base_jitter: float = ad.DEFAULT_JITTER,
         name: str | None = None, whiten: bool = False) -> Tensor:
    """``KL(N(m_u, S_u) || N(m(Z), K(Z, Z)))`` summed over latents.

    In whitened coordinates the prior is ``N(0, I)`` and no Cholesky of
    ``K(Z, Z)`` is needed.
    """
    if whiten:
        L_S = state.L_S()
        n = int(np.prod(L_S.shape[:-1]))
        return 0.5 * (ad.sum_(ad.square(L_S)) + ad.sum_(ad.square(as_tensor(state.m_u))) - float(n)
                      - 2.0 * ad.sum_(state.log_diag_L_S()))
    if prior is None:
        prior = inducing_prior(state, kernel, mean, base_jitter, name)
    Lz = prior.chol
    M = Lz.shape[-1]
    T = ad.triangular_solve(Lz, state.L_S(), lower=True)
    trace = ad.sum_(ad.square(T))
    delta = as_tensor(state.m_u) - prior.mean
    v = ad.triangular_solve(Lz, ad.reshape(delta, delta.shape + (1,)), lower=True)
    quad = ad.sum_(ad.square(v))
    logdet_p = 2.0 * ad.sum_(ad.log(ad.diagonal(Lz)))
    logdet_q = 2.0 * ad.sum_(state.log_diag_L_S())
    n_latent = int(np.prod(Lz.shape[:-2])) if Lz.ndim > 2 else 1
    return 0.5 * (trace + quad - float(M * n_latent) + logdet_p - logdet_q)


def sample_marginal(marg: MarginalGaussian, eps: Any) -> Tensor:
    """Reparameterised draw ``mean + sqrt(var) * eps``."""
    eps = as_tensor(eps)
    return marg.mean + ad.sqrt(marg.var) * eps


def exact_gp_mll(X: Any, y: Any, kernel: SEKernelParams, mean: ConstantMeanParams,
                 noise_var: Any) -> Tensor:
    """``log N(y; m(X), K(X, X) + noise_var I)`` for a single-output GP."""
    X = as_tensor(X)
    y = as_tensor(y)
    N = X.shape[0]
    K = se_kernel(X, X, kernel) + as_tensor(noise_var) * np.eye(N)
    L = ad.cholesky(K, base_jitter=0.0)
    r = ad.reshape(y - constant_mean(X, mean), (N, 1))
    alpha = ad.triangular_solve(L, r, lower=True)
    return (
        -0.5 * ad.sum_(ad.square(alpha))
        - ad.sum_(ad.log(ad.diagonal(L)))
        - 0.5 * N * math.log(2.0 * math.pi)
    )

"""Squared-exponential kernel, constant mean and the LMC output mixing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor


def inv_softplus(y: Any) -> np.ndarray:
    """Inverse of ``log(1 + exp(x))`` for positive ``y``."""
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


@dataclass
class SEKernelParams:
    """ARD squared-exponential hyperparameters in unconstrained form.

    ``raw_lengthscales`` has shape ``(*batch, D)`` and ``raw_outputscale``
    shape ``batch``; a batch axis holds independent latent GPs.
    """

    raw_lengthscales: Any
    raw_outputscale: Any

    @classmethod
    def init(cls, input_dim: int, batch: tuple[int, ...] = (), lengthscale: float = 1.0,
             outputscale: float = 1.0) -> SEKernelParams:
        return cls(
            raw_lengthscales=np.full(batch + (input_dim,), inv_softplus(lengthscale)),
            raw_outputscale=np.full(batch, inv_softplus(outputscale)),
        )

    @property
    def lengthscales(self) -> Tensor:
        return ad.softplus(self.raw_lengthscales)

    @property
    def outputscale(self) -> Tensor:
        return ad.softplus(self.raw_outputscale)


@dataclass
class ConstantMeanParams:
    c: Any

    @classmethod
    def init(cls, batch: tuple[int, ...] = (), value: float = 0.0) -> ConstantMeanParams:
        return cls(c=np.full(batch, float(value)))


@dataclass
class MixingMatrix:
    """``B`` of shape ``(D_out, L)`` mapping L latent GPs to D_out outputs."""

    B: Any


def se_kernel(X: Any, X2: Any, params: SEKernelParams) -> Tensor:
    """``sigma_f^2 exp(-0.5 sum_d ((x_d - x2_d) / l_d)^2)``.

    ``X`` is ``(..., N, D)``, ``X2`` is ``(..., M, D)`` and the parameter batch
    shape must broadcast against the leading axes; the result is ``(..., N, M)``.
    """
    X, X2 = as_tensor(X), as_tensor(X2)
    ls = params.lengthscales
    if X.shape[-1] != X2.shape[-1] or X.shape[-1] != ls.shape[-1]:
        raise ad.ShapeError(
            f"se_kernel: input dims {X.shape[-1]}, {X2.shape[-1]} vs lengthscales {ls.shape[-1]}"
        )
    ls = ad.reshape(ls, ls.shape[:-1] + (1, ls.shape[-1]))
    Xs = X / ls
    X2s = X2 / ls
    sq1 = ad.sum_(ad.square(Xs), axis=-1)
    sq2 = ad.sum_(ad.square(X2s), axis=-1)
    sq1 = ad.reshape(sq1, sq1.shape + (1,))
    sq2 = ad.reshape(sq2, sq2.shape[:-1] + (1, sq2.shape[-1]))
    cross = Xs @ ad.transpose(X2s)
    r2 = sq1 + sq2 - 2.0 * cross
    var = params.outputscale
    var = ad.reshape(var, var.shape + (1, 1))
    return var * ad.exp(-0.5 * r2)


def kernel_diag(X: Any, params: SEKernelParams) -> Tensor:
    """``k(x, x)`` for every row of ``X``; constant for a stationary kernel."""
    X = as_tensor(X)
    var = params.outputscale
    var = ad.reshape(var, var.shape + (1,))
    batch = np.broadcast_shapes(var.shape[:-1], X.shape[:-2]) + (X.shape[-2],)
    return ad.broadcast(var, batch)


def constant_mean(X: Any, params: ConstantMeanParams) -> Tensor:
    """Mean vector of length ``N`` (with the parameter batch prepended)."""
    X = as_tensor(X)
    c = as_tensor(params.c)
    c = ad.reshape(c, c.shape + (1,))
    shape = np.broadcast_shapes(c.shape[:-1], X.shape[:-2]) + (X.shape[-2],)
    return ad.broadcast(c, shape)


def mix_outputs(G: Any, B: MixingMatrix | Any) -> Tensor:
    """``out[s, n, :] = B @ G[s, n, :]`` for latent samples ``G`` of shape ``(S, N, L)``."""
    G = as_tensor(G)
    Bm = as_tensor(B.B if isinstance(B, MixingMatrix) else B)
    if G.shape[-1] != Bm.shape[-1]:
        raise ad.ShapeError(f"mix_outputs: latent dim {G.shape[-1]} vs mixing {Bm.shape}")
    return G @ ad.transpose(Bm)

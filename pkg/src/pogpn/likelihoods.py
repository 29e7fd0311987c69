"""Observation likelihoods ``p(y | f)`` for graph nodes.

Every likelihood works on batched latent samples ``f`` of shape
``(S, N, D_f)`` and returns per-sample, per-row log densities of shape
``(S, N)``.  Observations are ``(N, D_y)`` float arrays together with a
boolean mask of the same shape; unobserved entries contribute nothing.
Class labels are stored as floats ``0 .. C-1`` in a single column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .kernels import inv_softplus
from .svgp import MarginalGaussian

LOG_2PI = math.log(2.0 * math.pi)

KINDS = ("gaussian", "multitask-gaussian", "bernoulli", "softmax")


class LikelihoodError(ValueError):
    pass


@dataclass
class LikelihoodParams:
    """Learnable likelihood parameters; unused fields stay ``None``."""

    raw_noise: Any = None
    W: Any = None


@dataclass(frozen=True)
class Likelihood:
    """Configuration of one observation lens.

    ``num_outputs`` is ``D_y`` for the Gaussian kinds; ``num_classes`` is the
    label count for softmax (bernoulli is always two classes).
    """

    kind: str
    num_outputs: int = 1
    num_classes: int = 2

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise LikelihoodError(f"unknown likelihood kind {self.kind!r}")
        if self.kind == "gaussian" and self.num_outputs != 1:
            raise LikelihoodError("gaussian likelihood has exactly one output; use multitask-gaussian")

    @property
    def is_gaussian(self) -> bool:
        return self.kind in ("gaussian", "multitask-gaussian")

    @property
    def obs_dim(self) -> int:
        """Number of observation columns."""
        return self.num_outputs if self.is_gaussian else 1

    def init_params(self, latent_dim: int, rng: np.random.Generator,
                    noise: float = 0.1) -> LikelihoodParams:
        if self.is_gaussian:
            if latent_dim != self.num_outputs:
                raise LikelihoodError(
                    f"{self.kind}: latent dim {latent_dim} != outputs {self.num_outputs}")
            return LikelihoodParams(raw_noise=np.full(self.num_outputs, inv_softplus(noise)))
        if self.kind == "bernoulli":
            if latent_dim != 1:
                raise LikelihoodError("bernoulli likelihood needs a scalar latent")
            return LikelihoodParams()
        return LikelihoodParams(W=rng.standard_normal((self.num_classes, latent_dim)))

    def noise_var(self, params: LikelihoodParams) -> Tensor:
        return ad.softplus(params.raw_noise)

    # -- densities -----------------------------------------------------------

    def _check(self, y: np.ndarray, mask: np.ndarray) -> None:
        if np.any(np.isnan(y[mask])):
            raise LikelihoodError("NaN in observed values")
        if not self.is_gaussian:
            labels = y[mask]
            n_cls = 2 if self.kind == "bernoulli" else self.num_classes
            if np.any((labels < 0) | (labels > n_cls - 1) | (labels != np.round(labels))):
                raise LikelihoodError(f"{self.kind}: label out of range 0..{n_cls - 1}")

    def log_prob(self, params: LikelihoodParams, y: Any, f: Any,
                 mask: np.ndarray | None = None) -> Tensor:
        """Per-sample, per-row ``log p(y | f)`` summed over observed entries."""
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        mask = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(y.shape)
        self._check(y, mask)
        f = as_tensor(f)
        y0 = np.where(mask, y, 0.0)
        if self.is_gaussian:
            var = self.noise_var(params)
            resid = ad.square(y0 - f)
            lp = -0.5 * (LOG_2PI + ad.log(var)) - 0.5 * resid / var
            return ad.sum_(lp * mask, axis=-1)
        if self.kind == "bernoulli":
            sign = 1.0 - 2.0 * y0[:, 0]
            return -ad.softplus(f[..., 0] * sign) * mask[:, 0].astype(np.float64)
        logits = f @ ad.transpose(as_tensor(params.W))
        onehot = np.zeros(y.shape[:1] + (self.num_classes,))
        rows = np.flatnonzero(mask[:, 0])
        onehot[rows, y0[rows, 0].astype(int)] = 1.0
        return ad.sum_(ad.log_softmax(logits, axis=-1) * onehot, axis=-1)

    def expected_log_prob(self, params: LikelihoodParams, y: Any, marg: MarginalGaussian | None = None,
                          samples: Any = None, mask: np.ndarray | None = None) -> Tensor:
        """``E_q[log p(y | f)]`` per row.

        Gaussian kinds use the closed form on ``marg`` (mean/var ``(..., N, D)``);
        the others average ``log_prob`` over ``samples`` along axis 0.
        """
        if self.is_gaussian and marg is not None:
            y = np.asarray(y, dtype=np.float64)
            if y.ndim == 1:
                y = y[:, None]
            mask = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(y.shape)
            self._check(y, mask)
            y0 = np.where(mask, y, 0.0)
            var = self.noise_var(params)
            lp = (-0.5 * (LOG_2PI + ad.log(var)) - 0.5 * ad.square(y0 - marg.mean) / var
                  - 0.5 * marg.var / var)
            return ad.sum_(lp * mask, axis=-1)
        if samples is None:
            raise LikelihoodError(f"{self.kind}: Monte-Carlo samples required")
        return ad.mean(self.log_prob(params, y, samples, mask), axis=0)

    def log_expected_prob(self, params: LikelihoodParams, y: Any, samples: Any,
                          mask: np.ndarray | None = None) -> Tensor:
        """``log (1/S) sum_s p(y | f_s)`` per row, via logsumexp over axis 0."""
        lp = self.log_prob(params, y, samples, mask)
        S = lp.shape[0]
        return ad.logsumexp(lp, axis=0) - math.log(S)

    def predictive_density(self, params: LikelihoodParams, y: Any, marg: MarginalGaussian | None = None,
                           samples: Any = None, mask: np.ndarray | None = None) -> Tensor:
        """Log predictive density ``log E_q[p(y | f)]`` per row.

        Exact ``log N(y; mu, v + sigma^2)`` for Gaussian kinds given ``marg``;
        Monte-Carlo over ``samples`` otherwise.
        """
        if self.is_gaussian and marg is not None:
            y = np.asarray(y, dtype=np.float64)
            if y.ndim == 1:
                y = y[:, None]
            mask = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(y.shape)
            y0 = np.where(mask, y, 0.0)
            total = marg.var + self.noise_var(params)
            lp = -0.5 * (LOG_2PI + ad.log(total)) - 0.5 * ad.square(y0 - marg.mean) / total
            return ad.sum_(lp * mask, axis=-1)
        return self.log_expected_prob(params, y, samples, mask)

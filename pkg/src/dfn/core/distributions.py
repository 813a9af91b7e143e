"""Diagonal Gaussians: reparameterized sampling and closed-form KL."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
LOG_2PI = math.log(2.0 * math.pi)


class DiagGaussian:
    """Mean / log-variance pair; log-variance is clamped at construction."""

    __slots__ = ("mean", "log_var")

    def __init__(self, mean, log_var):
        mean, log_var = T.as_tensor(mean), T.as_tensor(log_var)
        if mean.shape != log_var.shape:
            raise ValueError(f"mean/log_var shape mismatch: {mean.shape} vs {log_var.shape}")
        self.mean = mean
        self.log_var = T.clamp(log_var, LOG_VAR_MIN, LOG_VAR_MAX)

    @classmethod
    def from_params(cls, out: Tensor) -> "DiagGaussian":
        """Split a network output ``[..., 2D]`` into mean and log-variance."""
        d = out.shape[-1] // 2
        return cls(out[..., :d], out[..., d:])

    @classmethod
    def standard(cls, shape) -> "DiagGaussian":
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> Tensor:
        return T.exp(self.log_var * 0.5)

    def log_prob(self, x) -> np.ndarray:
        """Per-row log density (numpy; used by oracles, not training)."""
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        mu, lv = self.mean.data, self.log_var.data
        return -0.5 * np.sum(LOG_2PI + lv + (x - mu) ** 2 / np.exp(lv), axis=-1)


def gaussian_sample(g: DiagGaussian, rng: np.random.Generator | None = None,
                    noise: np.ndarray | None = None) -> Tensor:
    """Reparameterized draw ``mean + exp(log_var / 2) * eps``.

    Either ``rng`` or pre-drawn standard-normal ``noise`` must be given.
    """
    if noise is None:
        if rng is None:
            raise ValueError("gaussian_sample needs an rng or explicit noise")
        noise = rng.standard_normal(g.mean.shape)
    return g.mean + g.std * Tensor(noise)


def gaussian_kl(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """KL(q || p) summed over the last axis."""
    if q.mean.shape[-1] != p.mean.shape[-1]:
        raise ValueError(f"KL dimension mismatch: {q.dim} vs {p.dim}")
    diff = q.mean - p.mean
    inv_var_p = T.exp(T.neg(p.log_var))
    per_dim = (p.log_var - q.log_var) + (T.exp(q.log_var) + T.square(diff)) * inv_var_p - 1.0
    return T.tsum(per_dim, axis=-1) * 0.5


def gaussian_kl_standard(q: DiagGaussian) -> Tensor:
    """KL(q || N(0, I)) summed over the last axis."""
    per_dim = T.exp(q.log_var) + T.square(q.mean) - q.log_var - 1.0
    return T.tsum(per_dim, axis=-1) * 0.5


def unit_gaussian_nll(x: Tensor, mean: Tensor, include_constant: bool = False) -> Tensor:
    """-log N(x; mean, I) summed over the last axis.

    Without the constant this is half the squared error.
    """
    sq = T.tsum(T.square(x - mean), axis=-1) * 0.5
    if include_constant:
        sq = sq + 0.5 * x.shape[-1] * LOG_2PI
    return sq

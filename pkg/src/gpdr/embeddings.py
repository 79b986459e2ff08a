"""Kernel-mean-embedding norms and MMD between 1-D Gaussian beliefs.

With the normalized Gaussian base kernel, ``prbf(a, b)`` is the inner product of
the embeddings of ``a`` and ``b``, so squared norms and squared MMD follow from
kernel evaluations alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InconsistentKernel
from .kernels import TWO_PI, GaussianInput, prbf

CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class EmbeddingNormResult:
    value: float
    lengthscale: float
    variance: float


def _check_1d(g: GaussianInput) -> None:
    if g.dim != 1:
        raise DimensionMismatch("embedding utilities take 1-D Gaussian inputs")


def kme_norm_sq(g: GaussianInput, gamma_sq: float, lengthscale: float) -> float:
    """Squared RKHS norm of the embedding of N(mean, var): gamma^2 / sqrt(2 pi (l^2 + 2 var))."""
    _check_1d(g)
    var = float(g.variances[0])
    return gamma_sq / math.sqrt(TWO_PI * (lengthscale**2 + (var + var)))


def kme_norm(g: GaussianInput, gamma_sq: float, lengthscale: float) -> EmbeddingNormResult:
    return EmbeddingNormResult(kme_norm_sq(g, gamma_sq, lengthscale), lengthscale,
                               float(g.variances[0]))


def _clamp(value: float) -> float:
    if value < 0.0:
        if value < -CLAMP_TOL:
            raise InconsistentKernel(f"squared MMD came out negative ({value:.3e})")
        return 0.0
    return value


def mmd_sq(a: GaussianInput, b: GaussianInput, gamma_sq: float, lengthscale: float) -> float:
    _check_1d(a)
    _check_1d(b)
    value = (kme_norm_sq(a, gamma_sq, lengthscale) + kme_norm_sq(b, gamma_sq, lengthscale)
             - 2.0 * prbf(a, b, gamma_sq, lengthscale))
    return _clamp(value)


def mmd_matrix(inputs: Sequence[GaussianInput], gamma_sq: float, lengthscale: float) -> np.ndarray:
    """Pairwise squared MMD from one cross-kernel evaluation plus the diagonal norms."""
    for g in inputs:
        _check_1d(g)
    mu = np.array([g.means[0] for g in inputs])
    var = np.array([g.variances[0] for g in inputs])
    s = lengthscale**2 + (var[:, None] + var[None, :])
    k = gamma_sq * np.exp(-((mu[:, None] - mu[None, :]) ** 2) / (2.0 * s)) / np.sqrt(TWO_PI * s)
    norms = gamma_sq / np.sqrt(TWO_PI * (lengthscale**2 + 2.0 * var))
    m = norms[:, None] + norms[None, :] - 2.0 * k
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 0.0)
    if np.any(m < -CLAMP_TOL):
        raise InconsistentKernel(f"squared MMD came out negative ({m.min():.3e})")
    return np.maximum(m, 0.0)

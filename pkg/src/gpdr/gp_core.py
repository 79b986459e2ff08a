"""Exact zero-mean Gaussian-process regression.

Everything goes through a Cholesky factor of ``K + noise_var * I``; no explicit
inverse is formed except where the hyperparameter gradient needs the full
``(K + noise_var I)^{-1}`` (obtained from the factor with LAPACK ``potri``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .errors import DimensionMismatch, NotFactorizable

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class JitterPolicy:
    """Diagonal jitter schedule: 0 first, then ``initial * mean(diag)`` growing by ``growth``."""

    initial: float = 1e-10
    growth: float = 2.0
    max_retries: int = 10


DEFAULT_JITTER = JitterPolicy()


def cholesky_psd(matrix, policy: JitterPolicy = DEFAULT_JITTER) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a symmetric PSD matrix, adding jitter only if needed.

    Returns
    -------
    (L, jitter) with ``L @ L.T == matrix + jitter * I``.

    Raises
    ------
    NotFactorizable
        If the factorization still fails after ``policy.max_retries`` jittered attempts.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotFactorizable("matrix has non-finite entries")
    scale = float(np.mean(np.abs(np.diag(a)))) if a.size else 0.0
    if scale == 0.0:
        scale = 1.0
    jitter = 0.0
    eye = np.eye(a.shape[0])
    for attempt in range(policy.max_retries + 1):
        if attempt > 0:
            jitter = policy.initial * scale * policy.growth ** (attempt - 1)
        chol, info = lapack.dpotrf(a + jitter * eye if jitter else a, lower=1, clean=1)
        if info == 0:
            if jitter:
                logger.info("cholesky_psd: added jitter %.3e (attempt %d)", jitter, attempt)
            return chol, jitter
    raise NotFactorizable(
        f"Cholesky failed after {policy.max_retries} retries (last jitter {jitter:.3e})"
    )


def inverse_from_cholesky(chol: np.ndarray) -> np.ndarray:
    """Full symmetric inverse of ``chol @ chol.T``."""
    inv, info = lapack.dpotri(chol, lower=1)
    if info != 0:
        raise NotFactorizable(f"potri failed with info={info}")
    return np.tril(inv) + np.tril(inv, -1).T


@dataclass(frozen=True)
class FittedGP:
    train_inputs: Any
    train_targets: np.ndarray
    kernel: Callable[[Any, Any], np.ndarray]
    noise_var: float
    chol_lower: np.ndarray
    weights: np.ndarray
    jitter: float = 0.0
    trace: Optional[np.ndarray] = None  # optimizer objective per epoch, when fitted by ascent

    @property
    def n(self) -> int:
        return len(self.train_targets)


@dataclass(frozen=True)
class GaussianPosterior:
    means: np.ndarray
    cov: np.ndarray
    per_point_sd: np.ndarray = field(init=False)

    def __post_init__(self):
        sd = np.sqrt(np.clip(np.diag(self.cov), 0.0, None))
        object.__setattr__(self, "per_point_sd", sd)

    def __len__(self) -> int:
        return len(self.means)

    def take(self, idx: Sequence[int]) -> GaussianPosterior:
        idx = np.asarray(idx)
        return GaussianPosterior(self.means[idx], self.cov[np.ix_(idx, idx)])


def fit_exact_gp(inputs, targets, kernel, noise_var: float,
                 policy: JitterPolicy = DEFAULT_JITTER, trace=None) -> FittedGP:
    """Factor ``K + noise_var I`` and solve for the representer weights."""
    y = np.asarray(targets, dtype=float).ravel()
    n = len(y)
    if n < 1:
        raise DimensionMismatch("cannot fit a GP to zero observations")
    if len(inputs) != n:
        raise DimensionMismatch(f"{len(inputs)} inputs but {n} targets")
    if noise_var < 0:
        raise ValueError("noise_var must be non-negative")
    kmat = np.asarray(kernel(inputs, inputs), dtype=float)
    kmat = 0.5 * (kmat + kmat.T)
    chol, jitter = cholesky_psd(kmat + noise_var * np.eye(n), policy)
    weights = linalg.cho_solve((chol, True), y)
    return FittedGP(inputs, y, kernel, float(noise_var), chol, weights, jitter, trace)


def posterior(model: FittedGP, test_inputs) -> GaussianPosterior:
    k_star = np.asarray(model.kernel(test_inputs, model.train_inputs), dtype=float)
    if k_star.shape[1] != model.n:
        raise DimensionMismatch("cross-covariance does not match training size")
    means = k_star @ model.weights
    v = linalg.solve_triangular(model.chol_lower, k_star.T, lower=True)
    k_ss = np.asarray(model.kernel(test_inputs, test_inputs), dtype=float)
    cov = k_ss - v.T @ v
    cov = 0.5 * (cov + cov.T)
    return GaussianPosterior(means, cov)


def posterior_marginals(model: FittedGP, test_inputs, prior_diag) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and variances only (skips the m x m covariance).

    ``prior_diag`` is the vector of ``k(x, x)`` at the test inputs.
    """
    k_star = np.asarray(model.kernel(test_inputs, model.train_inputs), dtype=float)
    means = k_star @ model.weights
    v = linalg.solve_triangular(model.chol_lower, k_star.T, lower=True)
    var = np.asarray(prior_diag, dtype=float) - np.einsum("ij,ij->j", v, v)
    return means, np.clip(var, 0.0, None)


def log_marginal_likelihood(model: FittedGP) -> float:
    y = model.train_targets
    logdet = 2.0 * np.sum(np.log(np.diag(model.chol_lower)))
    return float(-0.5 * y @ model.weights - 0.5 * logdet - 0.5 * model.n * LOG_2PI)


def lml_and_gradient(cov: np.ndarray, cov_grads: Sequence[np.ndarray], y: np.ndarray,
                     policy: JitterPolicy = DEFAULT_JITTER) -> tuple[float, np.ndarray]:
    """LML of ``y`` under N(0, cov) and its gradient given ``d cov / d theta_k``.

    Uses dLML/dtheta = 1/2 tr((a a^T - cov^{-1}) dcov/dtheta), a = cov^{-1} y.
    """
    chol, _ = cholesky_psd(cov, policy)
    alpha = linalg.cho_solve((chol, True), y)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    lml = -0.5 * y @ alpha - 0.5 * logdet - 0.5 * len(y) * LOG_2PI
    w = np.outer(alpha, alpha) - inverse_from_cholesky(chol)
    grad = np.array([0.5 * np.vdot(w, g) for g in cov_grads])
    return float(lml), grad


def sample_posterior(post: GaussianPosterior, count: int, seed: int,
                     policy: JitterPolicy = DEFAULT_JITTER) -> np.ndarray:
    """Draw ``count`` joint samples; row ``j`` is ``means + L z_j``."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    m = len(post.means)
    if not np.any(post.cov):
        return np.tile(post.means, (count, 1))
    chol, _ = cholesky_psd(post.cov, policy)
    z = rng.standard_normal((count, m))
    return post.means[None, :] + z @ chol.T

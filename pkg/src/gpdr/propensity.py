"""Generalized propensity score E[T | X] with a cross-fitted exact GP.

The data are split in two folds; a zero-mean GP is fitted on each fold by
maximizing the LML of the dosage, and each model scores only the other fold.
Candidate kernels are compared by the absolute out-of-sample signed bias
``|sum_i (mu_hat(x_i) - t_i)|`` rather than by MSE.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from . import gp_core
from .errors import DimensionMismatch, TooFewUnits
from .kernels import StationaryKernel, sq_dist
from .optim import AdamConfig, adam_ascent

logger = logging.getLogger(__name__)

KERNEL_FAMILIES = ("matern12", "rbf")


@dataclass(frozen=True)
class PropensityConfig:
    kernel_family: str = "matern12"
    epochs: int = 1000
    learning_rate: float = 0.0015
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    moment_eps: float = 1e-8
    # False: report the latent-function variance only (observation noise excluded)
    include_noise_in_variance: bool = False

    def __post_init__(self):
        if self.kernel_family not in KERNEL_FAMILIES:
            raise ValueError(f"kernel_family must be one of {KERNEL_FAMILIES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def adam(self) -> AdamConfig:
        return AdamConfig(self.epochs, self.learning_rate, self.beta1, self.beta2, self.moment_eps)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PropensityEstimate:
    unit_index: int
    mean: float
    variance: float
    fold: int


def split_folds(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random two-way partition of ``range(n)``; sizes differ by at most one."""
    if n < 4:
        raise TooFewUnits(f"cross-fitting needs at least 4 units, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    half = n // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def _initial_log_params(X: np.ndarray, t: np.ndarray) -> np.ndarray:
    second_moment = float(np.mean(t**2))
    scale = second_moment if second_moment > 0 else 1.0
    dist = np.sqrt(sq_dist(X, X)[np.triu_indices(len(X), 1)])
    dist = dist[dist > 0]
    lengthscale = float(np.median(dist)) if dist.size else 1.0
    noise = max(0.5 * float(np.var(t)), 1e-2 * scale, 1e-8)
    return np.log([scale, lengthscale, noise])


def fit_propensity(X, t, config: PropensityConfig = PropensityConfig()) -> gp_core.FittedGP:
    """Maximize the LML of ``t`` over (scale, lengthscale, noise) with Adam in log space."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float).ravel()
    if X.shape[0] != t.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows in X but {t.shape[0]} dosages")
    if len(t) < 2:
        raise TooFewUnits("propensity fit needs at least 2 units")
    sq = sq_dist(X, X)
    eye = np.eye(len(t))

    def objective(u):
        kern = StationaryKernel(config.kernel_family, float(np.exp(u[0])), float(np.exp(u[1])))
        kmat = kern.from_sq_dist(sq)
        noise = float(np.exp(u[2]))
        grads = kern.grads_from_sq_dist(sq, kmat) + [noise * eye]
        return gp_core.lml_and_gradient(kmat + noise * eye, grads, t)

    result = adam_ascent(objective, _initial_log_params(X, t), config.adam())
    scale, lengthscale, noise = np.exp(result.x)
    kern = StationaryKernel(config.kernel_family, float(scale), float(lengthscale))
    return gp_core.fit_exact_gp(X, t, kern, float(noise), trace=result.trace)


def predict_propensity(model: gp_core.FittedGP, X, include_noise: bool = False):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mean, var = gp_core.posterior_marginals(model, X, model.kernel.diag(len(X)))
    if include_noise:
        var = var + model.noise_var
    return mean, var


def cross_fit(X, t, config: PropensityConfig = PropensityConfig()):
    """Cross-fitted estimates plus the two fold models (for diagnostics)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float).ravel()
    n = len(t)
    folds = split_folds(n, config.seed)
    means = np.empty(n)
    variances = np.empty(n)
    fold_of = np.empty(n, dtype=int)
    models = []
    for k, (train, held_out) in enumerate([(folds[0], folds[1]), (folds[1], folds[0])]):
        model = fit_propensity(X[train], t[train], config)
        mu, var = predict_propensity(model, X[held_out], config.include_noise_in_variance)
        means[held_out] = mu
        variances[held_out] = var
        # fold label = the fold the unit belongs to (scored by the other fold's model)
        fold_of[held_out] = 1 - k
        models.append(model)
    estimates = [PropensityEstimate(i, float(means[i]), float(variances[i]), int(fold_of[i]))
                 for i in range(n)]
    return estimates, models, folds


def cross_fitted_scores(X, t, config: PropensityConfig = PropensityConfig()) -> list[PropensityEstimate]:
    return cross_fit(X, t, config)[0]


def estimates_to_arrays(estimates: Sequence[PropensityEstimate]):
    """(mean, variance, fold) arrays ordered by unit index."""
    ordered = sorted(estimates, key=lambda e: e.unit_index)
    return (np.array([e.mean for e in ordered]), np.array([e.variance for e in ordered]),
            np.array([e.fold for e in ordered], dtype=int))


def out_of_sample_bias(estimates: Sequence[PropensityEstimate], t) -> float:
    """Signed sum of held-out errors ``sum_i (mu_hat_i - t_i)``."""
    mean, _, _ = estimates_to_arrays(estimates)
    return float(np.sum(mean - np.asarray(t, dtype=float)))


def pick_least_biased(predictions: Sequence[np.ndarray], t) -> tuple[int, list[float]]:
    """Index of the prediction vector with the smallest ``|sum(pred - t)|`` (first wins ties)."""
    t = np.asarray(t, dtype=float).ravel()
    biases = [float(np.sum(np.asarray(p, dtype=float) - t)) for p in predictions]
    best = min(range(len(biases)), key=lambda i: (abs(biases[i]), i))
    return best, biases


def select_propensity_model(candidates: Sequence[PropensityConfig], X, t):
    """Pick the candidate with the smallest absolute out-of-sample signed bias.

    Returns ``(config, estimates, diagnostics)``; ties go to the earliest candidate.
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    t = np.asarray(t, dtype=float).ravel()
    all_estimates = [cross_fitted_scores(X, t, cfg) for cfg in candidates]
    means = [estimates_to_arrays(e)[0] for e in all_estimates]
    best, biases = pick_least_biased(means, t)
    diagnostics = [
        {"candidate": i, "kernel_family": cfg.kernel_family, "signed_bias": biases[i],
         "abs_bias": abs(biases[i]), "rmse": float(np.sqrt(np.mean((means[i] - t) ** 2)))}
        for i, cfg in enumerate(candidates)
    ]
    logger.info("propensity selection: %s", diagnostics)
    return candidates[best], all_estimates[best], diagnostics

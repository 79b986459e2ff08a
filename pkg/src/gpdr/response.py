"""Dose-response GP: theta rows, half-Normal priors, MAP fitting and ADRF posteriors.

The objective maximized over log-space kernel parameters is

    LML(y_centered) + sum of half-Normal log densities over gamma, omega, l_j, rho

with no prior on the noise variance or on the KL-kernel divergence scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import linalg
from scipy.stats import norm

from . import gp_core
from .errors import DegenerateTargets, DimensionMismatch, NegativeValue
from .kernels import (
    BoundKernel,
    GaussianBatch,
    KernelParams,
    KernelVariant,
    make_variant,
    pairwise,
    param_gradient,
)
from .optim import AdamConfig, adam_ascent

logger = logging.getLogger(__name__)

# median of a half-Normal(sigma) is sigma * sqrt(2) * erfinv(1/2)
HALF_NORMAL_MEDIAN = 0.6744897501960817
GAMMA_MEDIAN_FACTOR = 2.0
OMEGA_MEDIAN_FACTOR = 0.5


@dataclass(frozen=True)
class ThetaRow:
    ps_mean: float
    ps_var: float
    covariates: np.ndarray
    treatment: float

    def __post_init__(self):
        if self.ps_var < 0:
            raise ValueError("ps_var must be non-negative")
        object.__setattr__(self, "covariates", np.atleast_1d(np.asarray(self.covariates, float)))


def theta_batch(ps_mean, ps_var, X, t) -> GaussianBatch:
    """Stack ``[ps, x_1..x_d, t]`` means; only the PS column gets a variance."""
    ps_mean = np.asarray(ps_mean, dtype=float).ravel()
    ps_var = np.asarray(ps_var, dtype=float).ravel()
    t = np.asarray(t, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(t)
    if not (len(ps_mean) == len(ps_var) == X.shape[0] == n):
        raise DimensionMismatch("ps_mean, ps_var, X and t must have the same length")
    means = np.column_stack([ps_mean, X, t])
    variances = np.zeros_like(means)
    variances[:, 0] = ps_var
    return GaussianBatch(means, variances)


def rows_to_batch(rows: Sequence[ThetaRow]) -> GaussianBatch:
    return theta_batch([r.ps_mean for r in rows], [r.ps_var for r in rows],
                       np.vstack([r.covariates for r in rows]), [r.treatment for r in rows])


def with_treatment(rows: GaussianBatch, t_value: float) -> GaussianBatch:
    means = rows.means.copy()
    means[:, -1] = t_value
    return GaussianBatch(means, rows.variances)


@dataclass(frozen=True)
class PriorSpec:
    gamma_scale: float
    omega_scale: float
    lengthscale_scales: np.ndarray  # one per theta column: ps, x_1..x_d, t

    def __post_init__(self):
        scales = np.atleast_1d(np.asarray(self.lengthscale_scales, dtype=float))
        object.__setattr__(self, "lengthscale_scales", scales)
        if not (self.gamma_scale > 0 and self.omega_scale > 0 and np.all(scales > 0)):
            raise ValueError("all prior scales must be positive")

    def to_dict(self) -> dict:
        return {"gamma_scale": self.gamma_scale, "omega_scale": self.omega_scale,
                "lengthscale_scales": [float(s) for s in self.lengthscale_scales]}


def _column_scales(rows: GaussianBatch) -> np.ndarray:
    sd = np.std(rows.means, axis=0, ddof=1)
    # a constant column (e.g. a collapsed PS) has no scale of its own
    return np.where(sd > 0, sd, 1.0)


def build_prior_spec(y, rows: Optional[GaussianBatch] = None) -> PriorSpec:
    """Half-Normal scales whose medians are 2 SD(y) for gamma and SD(y)/2 for omega.

    Length-scale prior scales are the per-column sample SDs of ``rows`` (1 when
    ``rows`` is omitted).
    """
    y = np.asarray(y, dtype=float).ravel()
    if len(y) < 2:
        raise DegenerateTargets("need at least two responses")
    sd = float(np.std(y, ddof=1))
    if not sd > 0:
        raise DegenerateTargets("responses have zero variance")
    scales = _column_scales(rows) if rows is not None else np.ones(1)
    return PriorSpec(GAMMA_MEDIAN_FACTOR * sd / HALF_NORMAL_MEDIAN,
                     OMEGA_MEDIAN_FACTOR * sd / HALF_NORMAL_MEDIAN, scales)


def half_normal_log_density(v: float, scale: float) -> float:
    if v < 0:
        raise NegativeValue(f"half-Normal support is [0, inf), got {v}")
    if not scale > 0:
        raise ValueError("scale must be positive")
    return math.log(math.sqrt(2.0 / math.pi) / scale) - v * v / (2.0 * scale * scale)


def log_prior(variant: KernelVariant, priors: PriorSpec):
    """Return ``u -> (log prior, gradient)`` over the variant's unconstrained vector.

    Densities are on gamma = sqrt(gamma_sq), omega, l_j and rho themselves (no
    log-Jacobian term), matching a MAP fit of the constrained parameters.
    """
    names = variant.param_names()
    ls_scales = priors.lengthscale_scales
    t_scale = float(ls_scales[-1])
    if variant.tag in ("a-prbf", "a-rbf"):
        l_scales = ls_scales[: variant.n_covariates + 1]
    else:
        l_scales = ls_scales
    entries = []  # (index, kind, scale)
    for i, name in enumerate(names):
        if name == "log_gamma_sq":
            entries.append((i, "sq", priors.gamma_scale))
        elif name == "log_omega_sq":
            entries.append((i, "sq", priors.omega_scale))
        elif name.startswith("log_l"):
            entries.append((i, "len", float(l_scales[int(name[5:])])))
        elif name == "log_rho":
            entries.append((i, "len", t_scale))

    def fn(u):
        total = 0.0
        grad = np.zeros_like(u)
        for i, kind, s in entries:
            if kind == "sq":
                value = math.exp(0.5 * u[i])
                grad[i] = -value * value / (2.0 * s * s)
            else:
                value = math.exp(u[i])
                grad[i] = -value * value / (s * s)
            total += half_normal_log_density(value, s)
        return total, grad

    return fn


def _response_sd(y) -> float:
    y = np.asarray(y, dtype=float)
    sd = float(np.std(y, ddof=1)) if len(y) > 1 else 0.0
    # all-equal responses: fall back to unit scale so the fit stays well posed
    return sd if sd > 0 else 1.0


def initial_params(variant: KernelVariant, rows: GaussianBatch, y) -> KernelParams:
    """gamma <- SD(y), omega <- SD(y)/4, l_j <- SD(column j), rho <- SD(t), noise <- Var(y)/100."""
    sd_y = _response_sd(y)
    scales = _column_scales(rows)
    k = variant.n_lengthscales()
    ls = scales[:k] if k else np.ones(1)
    init = KernelParams(gamma_sq=sd_y**2, omega_sq=(sd_y / 4.0) ** 2, lengthscales=ls,
                        rho=float(scales[-1]), symg_a=1.0, noise_var=0.01 * sd_y**2)
    if variant.tag == "a-symg":
        cache = pairwise(variant, rows, rows)
        off = cache.divergence[np.triu_indices(len(rows), 1)]
        med = float(np.median(off)) if off.size else 1.0
        init = KernelParams(**{**init.__dict__, "symg_a": med if med > 0 else 1.0})
    return init


@dataclass
class ResponseFit:
    variant: KernelVariant
    params: KernelParams
    gp: gp_core.FittedGP
    trace: np.ndarray
    y_mean: float
    priors: PriorSpec
    initial: KernelParams
    seed: int = 0
    epochs: int = 0
    learning_rate: float = 0.0

    @property
    def objective(self) -> float:
        return float(self.trace[-1])

    def converged(self, window: int = 100, rel_tol: float = 1e-3) -> bool:
        """Objective change over the last ``window`` epochs is within ``rel_tol`` of |final|."""
        if len(self.trace) <= window:
            return False
        change = abs(self.trace[-1] - self.trace[-1 - window])
        return bool(change <= rel_tol * abs(self.trace[-1]))


def fit_response(rows: Union[GaussianBatch, Sequence[ThetaRow]], y,
                 variant: Union[str, KernelVariant], priors: Optional[PriorSpec] = None,
                 epochs: int = 7000, lr: float = 0.0025, seed: int = 0,
                 init: Optional[KernelParams] = None) -> ResponseFit:
    """MAP fit of the response GP by Adam ascent in log space.

    ``y`` is centered by its sample mean; the mean is added back by
    :func:`adrf_posterior`. The optimizer is deterministic, ``seed`` is recorded
    for downstream sampling.
    """
    if not isinstance(rows, GaussianBatch):
        rows = rows_to_batch(rows)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != len(rows):
        raise DimensionMismatch(f"{len(rows)} rows but {len(y)} responses")
    if isinstance(variant, str):
        variant = make_variant(variant, rows)
    y_mean = float(np.mean(y))
    yc = y - y_mean
    if priors is None:
        sd_y = _response_sd(y)
        priors = PriorSpec(GAMMA_MEDIAN_FACTOR * sd_y / HALF_NORMAL_MEDIAN,
                           OMEGA_MEDIAN_FACTOR * sd_y / HALF_NORMAL_MEDIAN, _column_scales(rows))
    start = init if init is not None else initial_params(variant, rows, y)
    prior_fn = log_prior(variant, priors)
    cache = pairwise(variant, rows, rows)

    def objective(u):
        params = variant.from_unconstrained(u, start)
        return param_gradient(variant, params, rows, yc, prior_fn, cache)

    result = adam_ascent(objective, variant.to_unconstrained(start), AdamConfig(epochs, lr))
    params = variant.from_unconstrained(result.x, start)
    gp = gp_core.fit_exact_gp(rows, yc, BoundKernel(variant, params), params.noise_var,
                              trace=result.trace)
    logger.info("fit_response %s: objective %.4f -> %.4f", variant.tag,
                result.trace[0], result.trace[-1])
    return ResponseFit(variant, params, gp, result.trace, y_mean, priors, start, seed, epochs, lr)


def adrf_posterior(fit: ResponseFit, rows: Union[GaussianBatch, Sequence[ThetaRow]]) -> gp_core.GaussianPosterior:
    """Posterior of the response surface at ``rows`` (observed units by default in the harness)."""
    if not isinstance(rows, GaussianBatch):
        rows = rows_to_batch(rows)
    post = gp_core.posterior(fit.gp, rows)
    return gp_core.GaussianPosterior(post.means + fit.y_mean, post.cov)


@dataclass(frozen=True)
class AveragedAdrf:
    """Marginal ADRF on a grid: the response surface averaged over the given units."""

    t: np.ndarray
    means: np.ndarray
    sd: np.ndarray


def averaged_adrf(fit: ResponseFit, rows: GaussianBatch, t_grid) -> AveragedAdrf:
    """Posterior of ``(1/n) sum_k h(ps_k, x_k, t)`` for each ``t`` in ``t_grid``.

    Only pointwise variances are returned.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    n = len(rows)
    kern = fit.gp.kernel
    means = np.empty(len(t_grid))
    var = np.empty(len(t_grid))
    for g, t_value in enumerate(t_grid):
        shifted = with_treatment(rows, float(t_value))
        k_bar = kern(shifted, fit.gp.train_inputs).mean(axis=0)
        prior_var = float(kern(shifted, shifted).sum()) / n**2
        v = linalg.solve_triangular(fit.gp.chol_lower, k_bar, lower=True)
        means[g] = k_bar @ fit.gp.weights + fit.y_mean
        var[g] = max(prior_var - float(v @ v), 0.0)
    return AveragedAdrf(t_grid, means, np.sqrt(var))


def credible_interval(post, level: float = 0.90) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise Gaussian interval ``mean -/+ z * sd`` with z = Phi^{-1}((1 + level) / 2).

    ``post`` is a GaussianPosterior, an AveragedAdrf, or a ``(means, sd)`` pair.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if isinstance(post, gp_core.GaussianPosterior):
        means, sd = post.means, post.per_point_sd
    elif isinstance(post, AveragedAdrf):
        means, sd = post.means, post.sd
    else:
        means, sd = (np.asarray(a, dtype=float) for a in post)
    z = float(norm.ppf(0.5 + level / 2.0))
    return means - z * sd, means + z * sd

"""Covariance functions for the propensity and response GPs.

Response-model inputs are :class:`GaussianBatch` objects whose columns are laid
out as ``[ps, x_1, ..., x_d, t]``: column 0 carries the propensity posterior
(mean and variance), the covariate and treatment columns are deterministic
(variance 0). A :class:`KernelVariant` decides which columns each kernel term
sees.

All positive hyperparameters are optimized in log space. Scale parameters are
stored squared (``gamma_sq``, ``omega_sq``) and their unconstrained coordinate
is ``log(gamma_sq)``; length-scales use ``log(l)``; the noise uses ``log(noise_var)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import gp_core
from .errors import DimensionMismatch, ZeroVariance

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

VARIANT_TAGS = ("a-prbf", "a-rbf", "prbf", "rbf", "rbf-nd", "a-symg")

# Relative floor applied to deterministic dimensions before the KL-based kernel.
SYMG_FLOOR_FACTOR = 1e-6


# ---------------------------------------------------------------------------
# Inputs and parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianInput:
    """Per-dimension Gaussian belief about a single point."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        means = np.atleast_1d(np.asarray(self.means, dtype=float))
        variances = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if means.shape != variances.shape:
            raise DimensionMismatch("means and variances must have the same shape")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(variances))):
            raise ValueError("GaussianInput entries must be finite")
        if np.any(variances < 0):
            raise ValueError("variances must be non-negative")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @classmethod
    def deterministic(cls, means) -> GaussianInput:
        means = np.atleast_1d(np.asarray(means, dtype=float))
        return cls(means, np.zeros_like(means))

    @property
    def dim(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True)
class GaussianBatch:
    """A stack of :class:`GaussianInput` rows, ``means`` and ``variances`` of shape (n, D)."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if means.shape != variances.shape:
            raise DimensionMismatch("means and variances must have the same shape")
        if np.any(variances < 0):
            raise ValueError("variances must be non-negative")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def row(self, i: int) -> GaussianInput:
        return GaussianInput(self.means[i], self.variances[i])

    def take(self, idx) -> GaussianBatch:
        idx = np.asarray(idx)
        return GaussianBatch(self.means[idx], self.variances[idx])

    @classmethod
    def from_rows(cls, rows: Sequence[GaussianInput]) -> GaussianBatch:
        return cls(np.vstack([r.means for r in rows]), np.vstack([r.variances for r in rows]))


@dataclass(frozen=True)
class KernelParams:
    gamma_sq: float = 1.0
    omega_sq: float = 1.0
    lengthscales: np.ndarray = field(default_factory=lambda: np.ones(1))
    rho: float = 1.0
    symg_a: float = 1.0
    noise_var: float = 0.01

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        for name in ("gamma_sq", "omega_sq", "rho", "symg_a"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")
        if self.noise_var < 0:
            raise ValueError("noise_var must be non-negative")

    def to_dict(self) -> dict:
        return {
            "gamma_sq": self.gamma_sq,
            "omega_sq": self.omega_sq,
            "lengthscales": [float(v) for v in self.lengthscales],
            "rho": self.rho,
            "symg_a": self.symg_a,
            "noise_var": self.noise_var,
        }

    @classmethod
    def from_dict(cls, d: dict) -> KernelParams:
        return cls(
            gamma_sq=float(d["gamma_sq"]),
            omega_sq=float(d["omega_sq"]),
            lengthscales=np.asarray(d["lengthscales"], dtype=float),
            rho=float(d["rho"]),
            symg_a=float(d["symg_a"]),
            noise_var=float(d["noise_var"]),
        )


# ---------------------------------------------------------------------------
# Scalar kernels
# ---------------------------------------------------------------------------


def rbf(t: float, t_prime: float, omega_sq: float, rho: float) -> float:
    return omega_sq * math.exp(-((t - t_prime) ** 2) / (2.0 * rho**2))


def matern_half(x, x_prime, scale: float, lengthscale: float) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise DimensionMismatch(f"{x.shape} vs {x_prime.shape}")
    return scale * math.exp(-float(np.linalg.norm(x - x_prime)) / lengthscale)


def prbf(a: GaussianInput, b: GaussianInput, gamma_sq: float, lengthscales) -> float:
    """Gaussian kernel averaged over independent Gaussian uncertainty in both inputs.

    Per dimension the squared length-scale is inflated to ``l^2 + var_a + var_b``;
    the normalized factors multiply and ``gamma_sq`` scales the product once.
    """
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), a.means.shape)
    if a.dim != b.dim:
        raise DimensionMismatch(f"{a.dim} vs {b.dim}")
    s = ls**2 + (a.variances + b.variances)
    # written so that prbf(a, a) matches the embedding-norm formula bit for bit
    return (gamma_sq / math.sqrt(float(np.prod(TWO_PI * s)))
            * math.exp(-0.5 * float(np.sum((a.means - b.means) ** 2 / s))))


def symg_divergence(a: GaussianInput, b: GaussianInput) -> float:
    """Symmetrized KL divergence between two diagonal Gaussians."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"{a.dim} vs {b.dim}")
    if np.any(a.variances <= 0) or np.any(b.variances <= 0):
        raise ZeroVariance("symmetrized KL needs strictly positive variances")
    va, vb = a.variances, b.variances
    diff_sq = (a.means - b.means) ** 2
    return float(np.sum(va / vb + vb / va + (1.0 / va + 1.0 / vb) * diff_sq) - 2 * a.dim)


def symg(a: GaussianInput, b: GaussianInput, symg_a: float) -> float:
    return math.exp(-symg_divergence(a, b) / symg_a)


def a_prbf(theta: tuple[GaussianInput, float], theta_prime: tuple[GaussianInput, float],
           params: KernelParams) -> float:
    """Additive kernel: PRBF over (PS, covariates) plus an RBF over treatment.

    ``theta`` is ``(GaussianInput over [ps, x_1..x_d], t)``.
    """
    (g, t), (g_prime, t_prime) = theta, theta_prime
    return prbf(g, g_prime, params.gamma_sq, params.lengthscales) + rbf(
        t, t_prime, params.omega_sq, params.rho
    )


# ---------------------------------------------------------------------------
# Plain-matrix kernels (propensity model)
# ---------------------------------------------------------------------------


def sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    d = np.zeros((a.shape[0], b.shape[0]))
    for j in range(a.shape[1]):
        d += (a[:, j, None] - b[None, :, j]) ** 2
    return d


@dataclass(frozen=True)
class StationaryKernel:
    """``scale * exp(-r / l)`` (matern12) or ``scale * exp(-r^2 / 2 l^2)`` (rbf) on raw vectors."""

    family: str
    scale: float
    lengthscale: float

    def __call__(self, a, b) -> np.ndarray:
        return self.from_sq_dist(sq_dist(a, b))

    def from_sq_dist(self, sq: np.ndarray) -> np.ndarray:
        if self.family == "matern12":
            return self.scale * np.exp(-np.sqrt(sq) / self.lengthscale)
        if self.family == "rbf":
            return self.scale * np.exp(-sq / (2.0 * self.lengthscale**2))
        raise ValueError(f"unknown kernel family {self.family!r}")

    def grads_from_sq_dist(self, sq: np.ndarray, kmat: np.ndarray) -> list[np.ndarray]:
        """d K / d log(scale), d K / d log(lengthscale)."""
        if self.family == "matern12":
            return [kmat, kmat * np.sqrt(sq) / self.lengthscale]
        return [kmat, kmat * sq / self.lengthscale**2]

    def diag(self, n: int) -> np.ndarray:
        return np.full(n, self.scale)


# ---------------------------------------------------------------------------
# Response-model variants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelVariant:
    """One of the ablation kernels over ``[ps, x_1..x_d, t]`` rows.

    ``symg_floor`` holds the per-column variance floor for the KL kernel
    (columns ``0..d``); it is data dependent, see :func:`make_variant`.
    """

    tag: str
    n_covariates: int
    symg_floor: Optional[tuple] = None

    def __post_init__(self):
        if self.tag not in VARIANT_TAGS:
            raise ValueError(f"unknown kernel {self.tag!r}; valid: {', '.join(VARIANT_TAGS)}")
        if self.n_covariates < 0:
            raise ValueError("n_covariates must be >= 0")
        if self.tag == "a-symg" and self.symg_floor is None:
            raise ValueError("a-symg needs a variance floor; build it with make_variant")

    # column roles -------------------------------------------------------
    @property
    def width(self) -> int:
        return self.n_covariates + 2

    @property
    def ps_column(self) -> Optional[int]:
        return None if self.tag == "rbf-nd" else 0

    @property
    def covariate_columns(self) -> list[int]:
        return list(range(1, self.n_covariates + 1))

    @property
    def treatment_column(self) -> int:
        return self.n_covariates + 1

    @property
    def additive(self) -> bool:
        return self.tag in ("a-prbf", "a-rbf", "a-symg")

    def smooth_columns(self) -> list[int]:
        """Columns seen by the non-treatment (or only) kernel term."""
        if self.additive:
            return list(range(0, self.n_covariates + 1))
        if self.tag == "rbf-nd":
            return list(range(1, self.width))
        return list(range(0, self.width))

    # parameter vector ----------------------------------------------------
    def n_lengthscales(self) -> int:
        if self.tag in ("a-prbf", "a-rbf"):
            return self.n_covariates + 1
        if self.tag == "prbf":
            return self.width
        return 0

    def param_names(self) -> list[str]:
        ls = [f"log_l{j}" for j in range(self.n_lengthscales())]
        if self.tag in ("a-prbf", "a-rbf"):
            names = ["log_gamma_sq", *ls, "log_omega_sq", "log_rho"]
        elif self.tag == "prbf":
            names = ["log_gamma_sq", *ls]
        elif self.tag in ("rbf", "rbf-nd"):
            names = ["log_omega_sq", "log_rho"]
        else:
            names = ["log_gamma_sq", "log_symg_a", "log_omega_sq", "log_rho"]
        return names + ["log_noise_var"]

    def to_unconstrained(self, params: KernelParams) -> np.ndarray:
        vals = []
        for name in self.param_names():
            if name.startswith("log_l"):
                vals.append(math.log(params.lengthscales[int(name[5:])]))
            else:
                vals.append(math.log(getattr(params, name[4:])))
        return np.asarray(vals, dtype=float)

    def from_unconstrained(self, vec, base: KernelParams) -> KernelParams:
        vec = np.asarray(vec, dtype=float)
        updates: dict = {}
        ls = np.array(base.lengthscales, dtype=float)
        if self.n_lengthscales() and ls.shape[0] != self.n_lengthscales():
            ls = np.ones(self.n_lengthscales())
        for name, v in zip(self.param_names(), vec):
            if name.startswith("log_l"):
                ls[int(name[5:])] = math.exp(v)
            else:
                updates[name[4:]] = math.exp(v)
        return replace(base, lengthscales=ls, **updates)

    def check_params(self, params: KernelParams) -> None:
        k = self.n_lengthscales()
        if k and params.lengthscales.shape[0] != k:
            raise DimensionMismatch(
                f"{self.tag} with {self.n_covariates} covariates needs {k} lengthscales, "
                f"got {params.lengthscales.shape[0]}"
            )


def make_variant(tag: str, batch: GaussianBatch) -> KernelVariant:
    """Build a variant for ``batch`` (fixes the KL-kernel variance floor from the data)."""
    d = batch.dim - 2
    floor = None
    if tag == "a-symg":
        col_var = np.var(batch.means[:, : d + 1], axis=0)
        col_var = np.where(col_var > 0, col_var, 1.0)
        floor = tuple(float(v) for v in SYMG_FLOOR_FACTOR * col_var)
        logger.info("a-symg variance floor per column: %s", floor)
    return KernelVariant(tag, d, floor)


@dataclass
class PairwiseCache:
    """Parameter-free pairwise quantities between two batches."""

    smooth_sq: np.ndarray  # (k, na, nb) per-column squared mean differences
    smooth_var: Optional[np.ndarray]  # (k, na, nb) per-column variance sums (PRBF)
    treat_sq: Optional[np.ndarray]  # (na, nb)
    divergence: Optional[np.ndarray]  # (na, nb) symmetrized KL (a-symg)
    same: bool


def pairwise(variant: KernelVariant, a: GaussianBatch, b: GaussianBatch) -> PairwiseCache:
    if a.dim != variant.width or b.dim != variant.width:
        raise DimensionMismatch(
            f"{variant.tag} expects rows of width {variant.width}, got {a.dim} and {b.dim}"
        )
    cols = variant.smooth_columns()
    ma, mb = a.means[:, cols], b.means[:, cols]
    smooth_sq = (ma.T[:, :, None] - mb.T[:, None, :]) ** 2
    smooth_var = None
    divergence = None
    if variant.tag in ("a-prbf", "prbf"):
        va, vb = a.variances[:, cols], b.variances[:, cols]
        smooth_var = va.T[:, :, None] + vb.T[:, None, :]
    elif variant.tag == "a-rbf":
        smooth_var = np.zeros_like(smooth_sq)
    elif variant.tag == "a-symg":
        floor = np.asarray(variant.symg_floor)
        va = np.maximum(a.variances[:, cols], floor)
        vb = np.maximum(b.variances[:, cols], floor)
        ratio = va.T[:, :, None] / vb.T[:, None, :]
        inv_sum = 1.0 / va.T[:, :, None] + 1.0 / vb.T[:, None, :]
        divergence = np.sum(ratio + 1.0 / ratio + inv_sum * smooth_sq, axis=0) - 2 * len(cols)
        divergence = np.maximum(divergence, 0.0)
    treat_sq = None
    if variant.additive:
        tc = variant.treatment_column
        treat_sq = (a.means[:, tc, None] - b.means[None, :, tc]) ** 2
    return PairwiseCache(smooth_sq, smooth_var, treat_sq, divergence, a is b)


def evaluate(variant: KernelVariant, params: KernelParams, cache: PairwiseCache,
             with_grads: bool = False):
    """Kernel matrix (noise excluded) and optionally d K / d (unconstrained kernel params).

    The gradient list follows ``variant.param_names()`` without the final noise entry.
    """
    grads: list[np.ndarray] = []
    tag = variant.tag
    if tag in ("a-prbf", "a-rbf", "prbf"):
        variant.check_params(params)
        ls_sq = params.lengthscales**2
        s = ls_sq[:, None, None] + cache.smooth_var
        log_k = -0.5 * np.sum(np.log(TWO_PI * s), axis=0) - 0.5 * np.sum(cache.smooth_sq / s, axis=0)
        smooth = params.gamma_sq * np.exp(log_k)
        if with_grads:
            grads.append(smooth)
            for j in range(len(ls_sq)):
                grads.append(smooth * ls_sq[j] * (cache.smooth_sq[j] / s[j] ** 2 - 1.0 / s[j]))
    elif tag in ("rbf", "rbf-nd"):
        dist = np.sum(cache.smooth_sq, axis=0)
        smooth = params.omega_sq * np.exp(-dist / (2.0 * params.rho**2))
        if with_grads:
            grads += [smooth, smooth * dist / params.rho**2]
    else:
        smooth = params.gamma_sq * np.exp(-cache.divergence / params.symg_a)
        if with_grads:
            grads += [smooth, smooth * cache.divergence / params.symg_a]
    kmat = smooth
    if variant.additive:
        treat = params.omega_sq * np.exp(-cache.treat_sq / (2.0 * params.rho**2))
        kmat = smooth + treat
        if with_grads:
            grads += [treat, treat * cache.treat_sq / params.rho**2]
    if cache.same:
        kmat = 0.5 * (kmat + kmat.T)
    return (kmat, grads) if with_grads else kmat


def gram(variant: KernelVariant, params: KernelParams, rows_a: GaussianBatch,
         rows_b: GaussianBatch) -> np.ndarray:
    return evaluate(variant, params, pairwise(variant, rows_a, rows_b))


def gram_diag(variant: KernelVariant, params: KernelParams, rows: GaussianBatch) -> np.ndarray:
    """``k(r, r)`` for each row, without forming the full matrix."""
    out = np.empty(len(rows))
    for i in range(len(rows)):
        one = rows.take([i])
        out[i] = gram(variant, params, one, one)[0, 0]
    return out


@dataclass(frozen=True)
class BoundKernel:
    """A variant with fixed parameters, usable as a ``gp_core`` kernel handle."""

    variant: KernelVariant
    params: KernelParams

    def __call__(self, a: GaussianBatch, b: GaussianBatch) -> np.ndarray:
        return gram(self.variant, self.params, a, b)


PriorFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def param_gradient(variant: KernelVariant, params: KernelParams, rows: GaussianBatch,
                   targets, prior: Optional[PriorFn] = None,
                   cache: Optional[PairwiseCache] = None) -> tuple[float, np.ndarray]:
    """MAP objective (LML + log prior) and its gradient in unconstrained coordinates.

    ``prior`` maps the unconstrained vector to ``(log density, gradient)``.
    """
    y = np.asarray(targets, dtype=float)
    if cache is None:
        cache = pairwise(variant, rows, rows)
    kmat, grads = evaluate(variant, params, cache, with_grads=True)
    n = len(y)
    eye = np.eye(n)
    grads.append(params.noise_var * eye)
    lml, grad = gp_core.lml_and_gradient(kmat + params.noise_var * eye, grads, y)
    if prior is not None:
        lp, lp_grad = prior(variant.to_unconstrained(params))
        lml += lp
        grad = grad + lp_grad
    return lml, grad

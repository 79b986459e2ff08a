"""Simulated dose-response datasets and their true-ADRF oracles.

``full``: five covariates, confounded Gaussian dosage, deterministic response
``y = mu(x) + t * effect(x)``.

``ihdp``: response surfaces A/B/C over tagged covariates (synthetic by default)
with an exogenous count dosage (days in a child development center) and unit
response noise.

The true ADRF is the conditional mean ``E[Y(t) | T = t]``: a Monte-Carlo
average of ``mu(x) + t * effect(x)`` over a fresh covariate population, weighted
by the dosage density at ``t`` where the dosage depends on ``x``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .errors import DegenerateWeights, MissingTaggedColumn

logger = logging.getLogger(__name__)

G_OF_X5 = {1: 2.0, 2: -1.0, 3: -4.0}
X5_PROBS = (0.1, 0.4, 0.5)

BETA_A_PROBS = (0.5, 0.2, 0.15, 0.1, 0.05)
BETA_B_CONT_PROBS = (0.5, 0.125, 0.125, 0.125, 0.125)
BETA_B_BIN_PROBS = (0.6, 0.1, 0.1, 0.1, 0.1)
BETA_C_VALUES = (0.0, 2.5, 5.0)
BETA_C_PROBS = (0.6, 0.3, 0.1)
SURFACE_A_OFFSET = 4.0
SURFACE_B_TARGET_MEAN = 0.0
SURFACE_C_TARGET_MEAN = 10.0

# tag names required by the IHDP-style surfaces
BIRTHWEIGHT, GENDER, NEONATAL, DOSAGE = "birthweight", "gender", "neonatal", "cdc_days"


def g_of_x5(x5) -> np.ndarray:
    x5 = np.asarray(x5)
    out = np.full(x5.shape, np.nan)
    for level, value in G_OF_X5.items():
        out[x5 == level] = value
    return out


@dataclass
class SimulatedDataset:
    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    pi_true: np.ndarray
    mu_true: np.ndarray
    effect_true: np.ndarray
    dgp_id: str
    seed: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.X.shape[0]
        for name in ("t", "y", "pi_true", "mu_true", "effect_true"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")

    @property
    def n(self) -> int:
        return self.X.shape[0]


# ---------------------------------------------------------------------------
# Full simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FullSimConfig:
    n: int = 250
    mu_variant: str = "nonlinear"
    effect_variant: str = "homogeneous"
    seed: int = 0
    # "verbatim": 0.8 Phi((3 mu - x1)/s - x1/2); "ancestor": 0.8 Phi(3 mu / s - x1/2)
    pi_form: str = "verbatim"

    def __post_init__(self):
        if self.mu_variant not in ("linear", "nonlinear"):
            raise ValueError("mu_variant must be 'linear' or 'nonlinear'")
        if self.effect_variant not in ("homogeneous", "heterogeneous"):
            raise ValueError("effect_variant must be 'homogeneous' or 'heterogeneous'")
        if self.pi_form not in ("verbatim", "ancestor"):
            raise ValueError("pi_form must be 'verbatim' or 'ancestor'")
        if self.n < 10:
            raise ValueError("n must be >= 10")


def _full_covariates(rng: np.random.Generator, n: int) -> np.ndarray:
    x123 = rng.standard_normal((n, 3))
    x4 = rng.binomial(1, 0.5, n).astype(float)
    x5 = rng.choice([1, 2, 3], size=n, p=X5_PROBS).astype(float)
    return np.column_stack([x123, x4, x5])


def full_mu(X: np.ndarray, mu_variant: str) -> np.ndarray:
    g = g_of_x5(X[:, 4])
    if mu_variant == "linear":
        return 1.0 + g + X[:, 0] * X[:, 2]
    return 1.0 + g + 6.0 * np.abs(X[:, 2] - 1.0)


def full_effect(X: np.ndarray, effect_variant: str) -> np.ndarray:
    if effect_variant == "homogeneous":
        return np.full(X.shape[0], 3.0)
    return 1.0 + 2.0 * X[:, 1] * X[:, 3]


def full_pi(X: np.ndarray, mu: np.ndarray, s: float, u: np.ndarray, pi_form: str) -> np.ndarray:
    x1 = X[:, 0]
    if pi_form == "verbatim":
        z = (3.0 * mu - x1) / s - x1 / 2.0
    else:
        z = 3.0 * mu / s - x1 / 2.0
    return 0.8 * norm.cdf(z) + u / 10.0


def gen_full_sim(n: int = 250, mu_variant: str = "nonlinear",
                 effect_variant: str = "homogeneous", seed: int = 0,
                 pi_form: str = "verbatim") -> SimulatedDataset:
    cfg = FullSimConfig(n, mu_variant, effect_variant, seed, pi_form)
    rng = np.random.default_rng(seed)
    X = _full_covariates(rng, n)
    mu = full_mu(X, mu_variant)
    s = float(np.std(mu, ddof=1))  # frozen: also used by the oracle
    u = rng.uniform(0.0, 1.0, n)
    pi = full_pi(X, mu, s, u, pi_form)
    eta = pi + rng.standard_normal(n)
    effect = full_effect(X, effect_variant)
    y = mu + eta * effect
    config = {"kind": "full", **asdict(cfg), "s": s}
    return SimulatedDataset(X, eta, y, pi, mu, effect, f"full-{mu_variant}-{effect_variant}",
                            seed, config)


# ---------------------------------------------------------------------------
# IHDP-style simulation
# ---------------------------------------------------------------------------


@dataclass
class TaggedCovariates:
    """Covariate matrix with column names, binary flags and role tags.

    ``tags`` maps role names (birthweight, gender, neonatal, cdc_days) to column
    indices. The dosage column is carried here but is not a covariate.
    """

    values: np.ndarray
    names: list
    binary: list
    tags: dict

    def require(self, *roles: str) -> None:
        for role in roles:
            if role not in self.tags:
                raise MissingTaggedColumn(f"covariates lack a column tagged {role!r}")

    @property
    def covariate_columns(self) -> list:
        dosage = self.tags.get(DOSAGE)
        return [j for j in range(self.values.shape[1]) if j != dosage]

    def covariates(self) -> np.ndarray:
        return self.values[:, self.covariate_columns]

    def covariate_binary(self) -> list:
        return [self.binary[j] for j in self.covariate_columns]

    def covariate_index(self, role: str) -> int:
        """Position of a tagged column within :meth:`covariates`."""
        return self.covariate_columns.index(self.tags[role])

    def dosage(self) -> np.ndarray:
        return self.values[:, self.tags[DOSAGE]]

    def take(self, idx) -> TaggedCovariates:
        return TaggedCovariates(self.values[idx], self.names, self.binary, self.tags)


SYNTHETIC_NAMES = ["birthweight", "gender", "neonatal", "aux_bin_1", "aux_bin_2", "aux_bin_3",
                   "aux_norm_1", "aux_norm_2", "aux_norm_3", "cdc_days"]
SYNTHETIC_BINARY = [False, True, False, True, True, True, False, False, False, False]
AUX_BIN_PROBS = (0.3, 0.5, 0.7)


def gen_synthetic_covariates(n: int, seed: int) -> TaggedCovariates:
    """Stand-in for the IHDP covariates.

    birthweight and neonatal composite ~ N(0, 1), gender ~ Bernoulli(0.5),
    three Bernoulli(0.3/0.5/0.7) and three N(0, 1) auxiliaries, and
    CDC days = round(|N(180, 60)|) floored at 1.
    """
    if n < 10:
        raise ValueError("n must be >= 10")
    rng = np.random.default_rng(seed)
    return _synthetic_from_rng(rng, n)


def _synthetic_from_rng(rng: np.random.Generator, n: int) -> TaggedCovariates:
    bw = rng.standard_normal(n)
    gender = rng.binomial(1, 0.5, n).astype(float)
    neo = rng.standard_normal(n)
    aux_bin = np.column_stack([rng.binomial(1, p, n) for p in AUX_BIN_PROBS]).astype(float)
    aux_norm = rng.standard_normal((n, 3))
    days = np.maximum(np.round(np.abs(rng.normal(180.0, 60.0, n))), 1.0)
    values = np.column_stack([bw, gender, neo, aux_bin, aux_norm, days])
    tags = {BIRTHWEIGHT: 0, GENDER: 1, NEONATAL: 2, DOSAGE: 9}
    return TaggedCovariates(values, list(SYNTHETIC_NAMES), list(SYNTHETIC_BINARY), tags)


def load_covariates(path, birthweight: str, gender: str, neonatal: str, dosage: str,
                    drop_zero_dosage: bool = True) -> TaggedCovariates:
    """Tagged covariates from a header-row CSV (e.g. the restricted IHDP file).

    Every column is read as numeric; a column is flagged binary when all its
    values are 0 or 1. Units with zero dosage are dropped by default.
    """
    from .io import read_numeric

    cols = read_numeric(path)
    names = list(cols)
    for col in (birthweight, gender, neonatal, dosage):
        if col not in cols:
            raise MissingTaggedColumn(f"column {col!r} not found in {path}")
    values = np.column_stack([cols[c] for c in names])
    if drop_zero_dosage:
        values = values[values[:, names.index(dosage)] > 0]
    binary = [bool(np.all(np.isin(values[:, j], (0.0, 1.0)))) for j in range(len(names))]
    tags = {BIRTHWEIGHT: names.index(birthweight), GENDER: names.index(gender),
            NEONATAL: names.index(neonatal), DOSAGE: names.index(dosage)}
    return TaggedCovariates(values, names, binary, tags)


def interaction_design(X: np.ndarray, binary: list) -> np.ndarray:
    """Covariates, squares of continuous covariates, and all pairwise products."""
    cont = [j for j, b in enumerate(binary) if not b]
    d = X.shape[1]
    pairs = [X[:, i] * X[:, j] for i in range(d) for j in range(i + 1, d)]
    cols = [X] + [X[:, cont] ** 2] + ([np.column_stack(pairs)] if pairs else [])
    return np.column_stack(cols)


def sample_beta(surface: str, binary: list, rng: np.random.Generator) -> np.ndarray:
    """Coefficient draws for one surface (one per column of the design it multiplies)."""
    d = len(binary)
    if surface == "A":
        return rng.choice(5, size=d, p=BETA_A_PROBS).astype(float)
    if surface == "B":
        out = np.empty(d)
        for j, is_bin in enumerate(binary):
            probs = BETA_B_BIN_PROBS if is_bin else BETA_B_CONT_PROBS
            out[j] = rng.choice(5, p=probs) / 10.0
        return out
    if surface == "C":
        n_cont = sum(1 for b in binary if not b)
        n_terms = d + n_cont + d * (d - 1) // 2
        return np.asarray(BETA_C_VALUES)[rng.choice(3, size=n_terms, p=BETA_C_PROBS)]
    raise ValueError(f"unknown surface {surface!r}")


def ihdp_effect(X: np.ndarray, cov: TaggedCovariates, effect_variant: str) -> np.ndarray:
    if effect_variant == "homogeneous":
        return np.full(X.shape[0], 3.0)
    x1 = X[:, cov.covariate_index(BIRTHWEIGHT)]
    x2 = X[:, cov.covariate_index(GENDER)]
    x3 = X[:, cov.covariate_index(NEONATAL)]
    return 1.0 + x1 * x2 / 3.0 + x1 * (1.0 - x2) / 2.0 + 2.0 * x3


def _surface_raw(surface: str, X: np.ndarray, binary: list, beta: np.ndarray) -> np.ndarray:
    if surface == "C":
        return interaction_design(X, binary) @ beta
    return X @ beta


def ihdp_population(cov: TaggedCovariates, n_mc: int, seed: int, synthetic: bool) -> TaggedCovariates:
    """Monte-Carlo covariate population: fresh synthetic draws, or a resample of supplied rows."""
    rng = np.random.default_rng(seed)
    if synthetic:
        return _synthetic_from_rng(rng, n_mc)
    return cov.take(rng.integers(0, cov.values.shape[0], n_mc))


def surface_offset(surface: str, population: TaggedCovariates, beta: np.ndarray,
                   effect_variant: str) -> float:
    """Additive constant of the surface: +4 for A, centering constants for B and C."""
    if surface == "A":
        return SURFACE_A_OFFSET
    X = population.covariates()
    raw = _surface_raw(surface, X, population.covariate_binary(), beta)
    dose_term = ihdp_effect(X, population, effect_variant) * population.dosage()
    target = SURFACE_B_TARGET_MEAN if surface == "B" else SURFACE_C_TARGET_MEAN
    return float(target - np.mean(raw + dose_term))


def gen_ihdp_sim(covariates: Optional[TaggedCovariates] = None, surface: str = "A",
                 effect_variant: str = "homogeneous", seed: int = 0, n: int = 500,
                 n_mc: int = 100_000, oracle_seed: Optional[int] = None):
    """IHDP-style dataset; returns ``(dataset, beta)``.

    With ``covariates=None`` a synthetic covariate set of size ``n`` is drawn
    from ``seed``. ``mu_true`` includes the surface offset (``Q beta + offset``
    for C, ``X beta - omega_B`` for B written as ``X beta + offset``).
    """
    if surface not in ("A", "B", "C"):
        raise ValueError("surface must be A, B or C")
    if effect_variant not in ("homogeneous", "heterogeneous"):
        raise ValueError("effect_variant must be 'homogeneous' or 'heterogeneous'")
    rng = np.random.default_rng(seed)
    synthetic = covariates is None
    if synthetic:
        covariates = _synthetic_from_rng(rng, n)
    covariates.require(BIRTHWEIGHT, GENDER, NEONATAL, DOSAGE)
    if np.any(covariates.dosage() < 0):
        raise ValueError("dosage column must be non-negative")
    X = covariates.covariates()
    binary = covariates.covariate_binary()
    beta = sample_beta(surface, binary, rng)
    oracle_seed = seed + 1 if oracle_seed is None else oracle_seed
    population = ihdp_population(covariates, n_mc, oracle_seed, synthetic)
    offset = surface_offset(surface, population, beta, effect_variant)
    mu = _surface_raw(surface, X, binary, beta) + offset
    effect = ihdp_effect(X, covariates, effect_variant)
    t = covariates.dosage().astype(float)
    y = mu + effect * t + rng.standard_normal(len(t))
    pi_const = float(np.mean(population.dosage()))
    config = {
        "kind": "ihdp", "surface": surface, "effect_variant": effect_variant, "seed": seed,
        "n": int(len(t)), "synthetic": synthetic, "n_mc": n_mc, "oracle_seed": oracle_seed,
        "offset": offset, "beta": [float(b) for b in beta],
        "covariate_names": [covariates.names[j] for j in covariates.covariate_columns],
        "covariate_binary": binary,
        "tags": {k: int(v) for k, v in covariates.tags.items()},
    }
    ds = SimulatedDataset(X, t, y, np.full(len(t), pi_const), mu, effect,
                          f"ihdp-{surface}-{effect_variant}", seed, config)
    ds._covariates = covariates  # kept for the oracle when covariates were supplied
    return ds, beta


# ---------------------------------------------------------------------------
# Smooth additive simulation (response is f(pi(x)) + g(t); both parts GP-realizable)
# ---------------------------------------------------------------------------

SMOOTH_NOISE_SD = 0.5


def smooth_pi(X: np.ndarray) -> np.ndarray:
    return np.sin(X[:, 0]) + 0.5 * X[:, 1]


def smooth_f(pi: np.ndarray) -> np.ndarray:
    return 2.0 * np.sin(1.5 * pi)


def smooth_g(t: np.ndarray) -> np.ndarray:
    return 0.5 * t + np.cos(t)


def gen_smooth_sim(n: int = 250, seed: int = 0, d: int = 3) -> SimulatedDataset:
    """Confounded DGP with ``t ~ N(pi(x), 1)`` and ``y = f(pi(x)) + g(t) + N(0, 0.25)``."""
    if n < 10:
        raise ValueError("n must be >= 10")
    if d < 2:
        raise ValueError("d must be >= 2")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    pi = smooth_pi(X)
    t = pi + rng.standard_normal(n)
    mu = smooth_f(pi)
    y = mu + smooth_g(t) + SMOOTH_NOISE_SD * rng.standard_normal(n)
    config = {"kind": "smooth", "n": n, "seed": seed, "d": d}
    # effect_true is zero: the dose enters only through the additive g(t)
    return SimulatedDataset(X, t, y, pi, mu, np.zeros(n), "smooth-additive", seed, config)


# ---------------------------------------------------------------------------
# True ADRF oracle
# ---------------------------------------------------------------------------


@dataclass
class AdrfOracle:
    """Evaluates the true ADRF at arbitrary dosages from a fixed MC population."""

    mu: np.ndarray
    effect: np.ndarray
    pi: Optional[np.ndarray]  # None: dosage independent of covariates (uniform weights)
    conditional: bool = True
    dose_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None  # extra term g(t), if any

    def _dose_term(self, t: np.ndarray) -> np.ndarray:
        return np.zeros_like(t) if self.dose_fn is None else self.dose_fn(t)

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.pi is None or not self.conditional:
            return float(np.mean(self.mu)) + t * float(np.mean(self.effect)) + self._dose_term(t)
        out = np.empty(len(t))
        for i, tv in enumerate(t):
            w = norm.pdf(tv - self.pi)
            total = float(np.sum(w))
            if not total > 1e-300 * len(w):
                raise DegenerateWeights(f"dosage density vanishes at t={tv}")
            out[i] = float(np.sum(w * (self.mu + tv * self.effect)) / total)
        return out + self._dose_term(t)

    def standard_error(self, t) -> np.ndarray:
        """MC standard error of the (self-normalized) estimate at each ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tau = self(t)
        out = np.empty(len(t))
        for i, tv in enumerate(t):
            m = self.mu + tv * self.effect
            if self.pi is None or not self.conditional:
                out[i] = float(np.std(m, ddof=1) / np.sqrt(len(m)))
            else:
                w = norm.pdf(tv - self.pi)
                w = w / w.sum()
                out[i] = float(np.sqrt(np.sum(w**2 * (m - tau[i]) ** 2)))
        return out


def make_oracle(config: dict, oracle_seed: Optional[int] = None, n_mc: int = 100_000,
                conditional: bool = True, covariates: Optional[TaggedCovariates] = None) -> AdrfOracle:
    """Build the MC oracle for a dataset's ``config`` (as stored in its sidecar)."""
    kind = config["kind"]
    if kind == "full":
        seed = config["seed"] + 1 if oracle_seed is None else oracle_seed
        rng = np.random.default_rng(seed)
        X = _full_covariates(rng, n_mc)
        mu = full_mu(X, config["mu_variant"])
        u = rng.uniform(0.0, 1.0, n_mc)
        pi = full_pi(X, mu, config["s"], u, config.get("pi_form", "verbatim"))
        effect = full_effect(X, config["effect_variant"])
        return AdrfOracle(mu, effect, pi, conditional)
    if kind == "ihdp":
        seed = config["oracle_seed"] if oracle_seed is None else oracle_seed
        synthetic = config["synthetic"]
        if not synthetic and covariates is None:
            raise ValueError("supplied-covariate IHDP oracle needs the covariates")
        population = ihdp_population(covariates, n_mc, seed, synthetic)
        X = population.covariates()
        beta = np.asarray(config["beta"])
        mu = _surface_raw(config["surface"], X, population.covariate_binary(), beta) + config["offset"]
        effect = ihdp_effect(X, population, config["effect_variant"])
        return AdrfOracle(mu, effect, None, conditional)
    if kind == "smooth":
        seed = config["seed"] + 1 if oracle_seed is None else oracle_seed
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n_mc, config["d"]))
        pi = smooth_pi(X)
        return AdrfOracle(smooth_f(pi), np.zeros(n_mc), pi, conditional, smooth_g)
    raise ValueError(f"unknown dgp kind {kind!r}")


def true_adrf(config: dict, t, oracle_seed: Optional[int] = None, n_mc: int = 100_000,
              conditional: bool = True, covariates: Optional[TaggedCovariates] = None) -> np.ndarray:
    oracle = make_oracle(config, oracle_seed, n_mc, conditional, covariates)
    return oracle(t)

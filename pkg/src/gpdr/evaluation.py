"""ADRF evaluation metrics, the Hirano-Imbens baseline and the replication harness.

Metrics compare per-unit estimates at the observed dosages with the true ADRF
``tau(t_i)``: coverage and mean length of 90% intervals, and bias/RMSE averaged
over posterior (or bootstrap) samples.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, field
from typing import Optional, Sequence

import numpy as np

from . import gp_core, propensity, response, simgen
from .errors import GPDRError, MisorderedInterval, SingularDesign

logger = logging.getLogger(__name__)

GP_METHODS = ("a-prbf", "a-rbf", "prbf", "rbf", "rbf-nd", "a-symg")
BASELINE_METHODS = ("hi",)
TAU_TARGETS = ("conditional", "marginal", "unit")


def _check_intervals(lo: np.ndarray, hi: np.ndarray) -> None:
    if lo.shape != hi.shape:
        raise ValueError("lo and hi must have the same shape")
    bad = np.flatnonzero(lo > hi)
    if bad.size:
        raise MisorderedInterval(f"lo > hi at {bad.size} positions (first index {bad[0]})")


def coverage_90(tau_true, lo, hi) -> float:
    """Fraction of ``tau_true`` inside ``[lo, hi]`` (both ends inclusive)."""
    tau, lo, hi = (np.asarray(a, dtype=float).ravel() for a in (tau_true, lo, hi))
    _check_intervals(lo, hi)
    if tau.shape != lo.shape:
        raise ValueError("tau_true and intervals must be aligned")
    return float(np.mean((lo <= tau) & (tau <= hi)))


def interval_length_90(lo, hi) -> float:
    lo, hi = (np.asarray(a, dtype=float).ravel() for a in (lo, hi))
    _check_intervals(lo, hi)
    return float(np.mean(hi - lo))


def bias_and_rmse(tau_true, samples) -> tuple[float, float]:
    """Per-sample ``mean(tau - Yhat_j)`` and ``sqrt(mean((tau - Yhat_j)^2))``, averaged over j."""
    tau = np.asarray(tau_true, dtype=float).ravel()
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[1] != tau.shape[0]:
        raise ValueError("samples must have one column per unit")
    err = tau[None, :] - samples
    bias = err.mean(axis=1)
    rmse = np.sqrt(np.mean(err**2, axis=1))
    return float(bias.mean()), float(rmse.mean())


# ---------------------------------------------------------------------------
# Hirano-Imbens baseline
# ---------------------------------------------------------------------------


def least_squares(design: np.ndarray, target: np.ndarray) -> np.ndarray:
    """OLS coefficients; raises SingularDesign on a rank-deficient design."""
    design = np.asarray(design, dtype=float)
    if design.shape[0] <= design.shape[1]:
        raise SingularDesign(f"{design.shape[0]} rows for {design.shape[1]} regressors")
    coef, _, rank, sv = np.linalg.lstsq(design, target, rcond=None)
    if rank < design.shape[1] or sv[-1] <= sv[0] * 1e-10:
        raise SingularDesign(f"design has rank {rank} < {design.shape[1]}")
    return coef


def hi_design(t: np.ndarray, ps: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones_like(t), t, t**2, ps, ps**2, t * ps])


@dataclass(frozen=True)
class HIFit:
    ps_coef: np.ndarray
    outcome_coef: np.ndarray

    def ps(self, X: np.ndarray) -> np.ndarray:
        return np.column_stack([np.ones(len(X)), X]) @ self.ps_coef

    def adrf(self, ps_hat: np.ndarray, t_values: np.ndarray) -> np.ndarray:
        """Average over units of the outcome surface with ``t := t*`` for each ``t*``."""
        b = self.outcome_coef
        tv = np.asarray(t_values, dtype=float)[:, None]
        p = ps_hat[None, :]
        surface = b[0] + b[1] * tv + b[2] * tv**2 + b[3] * p + b[4] * p**2 + b[5] * tv * p
        return surface.mean(axis=1)


def fit_hi(X, t, y) -> HIFit:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    ps_coef = least_squares(np.column_stack([np.ones(len(t)), X]), t)
    ps_hat = np.column_stack([np.ones(len(t)), X]) @ ps_coef
    return HIFit(ps_coef, least_squares(hi_design(t, ps_hat), y))


@dataclass
class HIResult:
    estimate: np.ndarray      # full-sample ADRF at the observed dosages
    samples: np.ndarray       # n_bootstrap x n bootstrap ADRF estimates
    lo: np.ndarray
    hi: np.ndarray


def hi_baseline(X, t, y, n_bootstrap: int = 50, seed: int = 0) -> HIResult:
    """Two-stage Hirano-Imbens estimate with bootstrap 5%/95% quantile intervals."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if n_bootstrap < 1:
        raise ValueError("n_bootstrap must be positive")
    full = fit_hi(X, t, y)
    estimate = full.adrf(full.ps(X), t)
    rng = np.random.default_rng(seed)
    n = len(t)
    samples = np.empty((n_bootstrap, n))
    for b in range(n_bootstrap):
        idx = rng.integers(0, n, n)
        fit = fit_hi(X[idx], t[idx], y[idx])
        samples[b] = fit.adrf(fit.ps(X[idx]), t)
    lo, hi = np.quantile(samples, [0.05, 0.95], axis=0)
    return HIResult(estimate, samples, lo, hi)


# ---------------------------------------------------------------------------
# Replication harness
# ---------------------------------------------------------------------------


@dataclass
class MetricsRecord:
    method: str
    scenario: str
    replication: str          # replication index, or "mean" for aggregate rows
    seed: Optional[int]
    cov90: float
    i90: float
    bias: float
    rmse: float
    n_units: int
    n_samples: int
    error: str = ""
    # cov90/i90/bias/rmse against alternative tau targets, keyed "<metric>_<target>"
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Scenario:
    """One table cell family: a DGP, a method list and replication seeds."""

    name: str
    dgp: dict
    methods: list
    replications: int = 10
    base_seed: int = 0
    epochs: int = 7000
    learning_rate: float = 0.0025
    ps_kernels: list = field(default_factory=lambda: ["matern12"])
    ps_epochs: int = 1000
    ps_learning_rate: float = 0.0015
    n_posterior_samples: int = 100
    n_bootstrap: int = 50
    tau_target: str = "conditional"
    sensitivity_targets: list = field(default_factory=list)
    n_mc: int = 100_000
    workers: int = 1

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in GP_METHODS + BASELINE_METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; valid: {GP_METHODS + BASELINE_METHODS}")
        for target in [self.tau_target, *self.sensitivity_targets]:
            if target not in TAU_TARGETS:
                raise ValueError(f"tau targets must be among {TAU_TARGETS}, got {target!r}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.dgp.get("kind") not in ("full", "ihdp", "smooth"):
            raise ValueError("dgp.kind must be 'full', 'ihdp' or 'smooth'")

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def seeds(self) -> list[int]:
        return [self.base_seed + r for r in range(self.replications)]


def generate(dgp: dict, seed: int) -> simgen.SimulatedDataset:
    kind = dgp["kind"]
    if kind == "full":
        return simgen.gen_full_sim(dgp.get("n", 250), dgp.get("mu", "nonlinear"),
                                   dgp.get("effect", "homogeneous"), seed,
                                   dgp.get("pi_form", "verbatim"))
    if kind == "ihdp":
        ds, _ = simgen.gen_ihdp_sim(None, dgp.get("surface", "A"), dgp.get("effect", "homogeneous"),
                                    seed, n=dgp.get("n", 500), n_mc=dgp.get("n_mc", 100_000))
        return ds
    if kind == "smooth":
        return simgen.gen_smooth_sim(dgp.get("n", 250), seed, dgp.get("d", 3))
    raise ValueError(f"unknown dgp kind {kind!r}")


def tau_at(ds: simgen.SimulatedDataset, target: str, n_mc: int) -> np.ndarray:
    """True ADRF at the observed dosages for the chosen target.

    ``unit`` is the noiseless unit-level mean ``mu(x_i) + t_i * effect(x_i)``, a
    sensitivity alternative to the Monte-Carlo conditional/marginal ADRF.
    """
    if target == "unit":
        extra = simgen.smooth_g(ds.t) if ds.config["kind"] == "smooth" else 0.0
        return ds.mu_true + ds.t * ds.effect_true + extra
    oracle = simgen.make_oracle(ds.config, n_mc=n_mc, conditional=(target == "conditional"))
    return oracle(ds.t)


def gp_propensity(ds: simgen.SimulatedDataset, sc: Scenario, seed: int):
    """Cross-fitted PS means and variances, picking the least-biased kernel family."""
    candidates = [propensity.PropensityConfig(kernel_family=k, epochs=sc.ps_epochs,
                                              learning_rate=sc.ps_learning_rate, seed=seed)
                  for k in sc.ps_kernels]
    _, estimates, _ = propensity.select_propensity_model(candidates, ds.X, ds.t)
    mean, var, _ = propensity.estimates_to_arrays(estimates)
    return mean, var


def evaluate_gp(method: str, ds, ps_mean, ps_var, sc: Scenario, seed: int):
    """Per-unit 90% intervals and posterior samples at the observed units."""
    rows = response.theta_batch(ps_mean, ps_var, ds.X, ds.t)
    fit = response.fit_response(rows, ds.y, method, epochs=sc.epochs, lr=sc.learning_rate, seed=seed)
    if not fit.converged():
        logger.warning("%s seed %d: objective not converged after %d epochs", method, seed, sc.epochs)
    post = response.adrf_posterior(fit, rows)
    lo, hi = response.credible_interval(post, 0.90)
    return lo, hi, gp_core.sample_posterior(post, sc.n_posterior_samples, seed)


def evaluate_hi(ds, sc: Scenario, seed: int):
    res = hi_baseline(ds.X, ds.t, ds.y, sc.n_bootstrap, seed)
    return res.lo, res.hi, res.samples


def score(tau, lo, hi, samples) -> tuple[float, float, float, float]:
    bias, rmse = bias_and_rmse(tau, samples)
    return coverage_90(tau, lo, hi), interval_length_90(lo, hi), bias, rmse


def run_replication(sc: Scenario, seed: int, index: int) -> list[MetricsRecord]:
    """All methods on one simulated dataset; failures are recorded per cell."""
    nan = float("nan")
    try:
        ds = generate(sc.dgp, seed)
        taus = {t: tau_at(ds, t, sc.n_mc) for t in dict.fromkeys([sc.tau_target, *sc.sensitivity_targets])}
    except GPDRError as exc:
        return [MetricsRecord(m, sc.name, str(index), seed, nan, nan, nan, nan, 0, 0,
                              type(exc).__name__) for m in sc.methods]
    ps = None
    records = []
    for method in sc.methods:
        try:
            if method == "hi":
                lo, hi, samples = evaluate_hi(ds, sc, seed)
            else:
                if ps is None:
                    ps = gp_propensity(ds, sc, seed)
                lo, hi, samples = evaluate_gp(method, ds, ps[0], ps[1], sc, seed)
            extras = {}
            for target in sc.sensitivity_targets:
                for key, val in zip(("cov90", "i90", "bias", "rmse"), score(taus[target], lo, hi, samples)):
                    extras[f"{key}_{target}"] = val
            records.append(MetricsRecord(method, sc.name, str(index), seed,
                                         *score(taus[sc.tau_target], lo, hi, samples),
                                         ds.n, len(samples), extras=extras))
        except GPDRError as exc:
            logger.error("%s replication %d failed: %s", method, index, exc)
            records.append(MetricsRecord(method, sc.name, str(index), seed, nan, nan, nan, nan,
                                         ds.n, 0, f"{type(exc).__name__}: {exc}"))
    return records


def aggregate(records: Sequence[MetricsRecord], methods: Sequence[str], scenario: str) -> list[MetricsRecord]:
    """One mean row per method over its successful replications."""
    out = []
    for method in methods:
        ok = [r for r in records if r.method == method and not r.error]
        failed = sum(1 for r in records if r.method == method and r.error)
        extras = {}
        if ok:
            vals = [float(np.mean([getattr(r, k) for r in ok])) for k in ("cov90", "i90", "bias", "rmse")]
            n_units, n_samples = ok[0].n_units, ok[0].n_samples
            extras = {k: float(np.mean([r.extras[k] for r in ok])) for k in ok[0].extras}
        else:
            vals, n_units, n_samples = [float("nan")] * 4, 0, 0
        note = f"{failed} failed" if failed else ""
        out.append(MetricsRecord(method, scenario, "mean", None, *vals, n_units, n_samples, note, extras))
    return out


def run_experiment(sc: Scenario) -> list[MetricsRecord]:
    """Per-replication records ordered by (replication, method), then aggregate rows."""
    seeds = sc.seeds()
    if sc.workers > 1:
        with ProcessPoolExecutor(max_workers=sc.workers) as pool:
            futures = [pool.submit(run_replication, sc, s, i) for i, s in enumerate(seeds)]
            per_rep = [f.result() for f in futures]
    else:
        per_rep = [run_replication(sc, s, i) for i, s in enumerate(seeds)]
    records = [r for rep in per_rep for r in rep]
    return records + aggregate(records, sc.methods, sc.name)


def format_value(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return "" if v is None else str(v)

"""Command-line interface: simulate, fit-ps, fit-response, estimate, mmd, benchmark, plot-data.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures (the
library error class name is printed to stderr).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from . import evaluation, gp_core, io, propensity, response, simgen
from .embeddings import mmd_matrix
from .errors import GPDRError
from .kernels import VARIANT_TAGS, BoundKernel, GaussianInput, KernelParams, make_variant

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors as exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def dataset_columns(ds: simgen.SimulatedDataset) -> dict:
    cols = {"unit_index": np.arange(ds.n)}
    for j in range(ds.X.shape[1]):
        cols[f"x_{j + 1}"] = ds.X[:, j]
    cols.update(t=ds.t, y=ds.y, pi_true=ds.pi_true, mu_true=ds.mu_true, effect_true=ds.effect_true)
    return cols


def cmd_simulate(args) -> None:
    if args.dgp == "full":
        ds = simgen.gen_full_sim(args.n, args.mu, args.effect, args.seed, args.pi_form)
    elif args.dgp == "ihdp":
        cov = None
        if args.covariates:
            tags = dict(kv.split("=", 1) for kv in args.tags.split(","))
            try:
                cov = simgen.load_covariates(args.covariates, tags["birthweight"], tags["gender"],
                                             tags["neonatal"], tags["cdc_days"])
            except KeyError as exc:
                raise UsageError(f"--tags must name birthweight, gender, neonatal and cdc_days (missing {exc})")
        ds, _ = simgen.gen_ihdp_sim(cov, args.surface, args.effect, args.seed, n=args.n, n_mc=args.n_mc)
        if args.covariates:
            ds.config["covariates_path"] = args.covariates
            ds.config["covariate_tags"] = args.tags
    else:
        ds = simgen.gen_smooth_sim(args.n, args.seed)
    io.write_columns(args.out, dataset_columns(ds))
    io.write_json(io.sidecar_path(args.out), {"dgp_id": ds.dgp_id, "seed": ds.seed, "config": ds.config})


# ---------------------------------------------------------------------------
# fit-ps
# ---------------------------------------------------------------------------


def ps_candidates(args) -> list:
    base = io.read_json(args.config) if args.config else {}
    families = base.pop("kernel_families", None) or args.kernels.split(",")
    for fam in families:
        if fam not in propensity.KERNEL_FAMILIES:
            raise UsageError(f"unknown PS kernel {fam!r}; valid: {', '.join(propensity.KERNEL_FAMILIES)}")
    base.setdefault("seed", args.seed)
    base.pop("kernel_family", None)
    return [propensity.PropensityConfig(kernel_family=f, **base) for f in families]


def cmd_fit_ps(args) -> None:
    data = io.read_dataset(args.data, io.infer_schema(args.data, response=None))
    candidates = ps_candidates(args)
    config, estimates, diagnostics = propensity.select_propensity_model(candidates, data.X, data.t)
    mean, var, fold = propensity.estimates_to_arrays(estimates)
    io.write_columns(args.out, {"unit_index": np.arange(data.n), "ps_mean": mean, "ps_var": var,
                                "fold": fold})
    io.write_json(io.sidecar_path(args.out), {"selected": config.to_dict(), "diagnostics": diagnostics})


# ---------------------------------------------------------------------------
# fit-response / estimate
# ---------------------------------------------------------------------------


def load_rows(data_path, ps_path):
    data = io.read_dataset(data_path)
    ps = io.read_numeric(ps_path, ["ps_mean", "ps_var"])
    if len(ps["ps_mean"]) != data.n:
        raise UsageError(f"{ps_path} has {len(ps['ps_mean'])} rows, {data_path} has {data.n}")
    return data, response.theta_batch(ps["ps_mean"], ps["ps_var"], data.X, data.t)


def posterior_columns(t, means, sd, lo, hi, unit_index=None) -> dict:
    cols = {} if unit_index is None else {"unit_index": unit_index}
    cols.update(t=t, adrf_mean=means, adrf_sd=sd, lo90=lo, hi90=hi)
    return cols


def fit_report(fit: response.ResponseFit, rows, y) -> dict:
    """Everything needed to rebuild the fitted GP without the original files."""
    trace = fit.trace
    return {
        "kernel": fit.variant.tag,
        "params": fit.params.to_dict(),
        "initial_params": fit.initial.to_dict(),
        "symg_floor": fit.variant.symg_floor,
        "y_mean": fit.y_mean,
        "seed": fit.seed,
        "epochs": fit.epochs,
        "learning_rate": fit.learning_rate,
        "priors": fit.priors.to_dict(),
        "objective": {"initial": float(trace[0]), "final": float(trace[-1]),
                      "max": float(np.max(trace)), "converged": fit.converged()},
        "jitter": fit.gp.jitter,
        "training": {"means": rows.means, "variances": rows.variances, "y": np.asarray(y)},
    }


def cmd_fit_response(args) -> None:
    data, rows = load_rows(args.data, args.ps)
    fit = response.fit_response(rows, data.y, args.kernel, epochs=args.epochs, lr=args.lr, seed=args.seed)
    post = response.adrf_posterior(fit, rows)
    lo, hi = response.credible_interval(post, args.level)
    io.write_columns(args.out, posterior_columns(data.t, post.means, post.per_point_sd, lo, hi,
                                                 np.arange(data.n)))
    io.write_json(args.report or io.sidecar_path(args.out), fit_report(fit, rows, data.y))


def load_fit(path):
    """Rebuild (gp, y_mean, rows, variant) from a fit report."""
    rep = io.read_json(path)
    tr = rep["training"]
    rows = response.GaussianBatch(np.asarray(tr["means"], dtype=float),
                                  np.asarray(tr["variances"], dtype=float))
    variant = make_variant(rep["kernel"], rows)
    params = KernelParams.from_dict(rep["params"])
    y = np.asarray(tr["y"], dtype=float)
    gp = gp_core.fit_exact_gp(rows, y - rep["y_mean"], BoundKernel(variant, params), params.noise_var)
    return gp, rep["y_mean"], rows, rep


def parse_grid(spec: str) -> Optional[np.ndarray]:
    """``observed``, ``a,b,c`` or ``lin:start:stop:count``."""
    if spec == "observed":
        return None
    try:
        if spec.startswith("lin:"):
            start, stop, count = spec[4:].split(":")
            return np.linspace(float(start), float(stop), int(count))
        return np.array([float(v) for v in spec.split(",")])
    except ValueError:
        raise UsageError(f"--at: cannot parse {spec!r}; use observed, a,b,c or lin:start:stop:count")


def estimate_from_report(path, at: str, level: float = 0.90) -> dict:
    gp, y_mean, rows, _ = load_fit(path)
    grid = parse_grid(at)
    if grid is None:
        post = gp_core.posterior(gp, rows)
        means = post.means + y_mean
        lo, hi = response.credible_interval((means, post.per_point_sd), level)
        return posterior_columns(rows.means[:, -1], means, post.per_point_sd, lo, hi, np.arange(len(rows)))
    fit = response.ResponseFit(None, None, gp, np.zeros(1), y_mean, None, None)
    avg = response.averaged_adrf(fit, rows, grid)
    lo, hi = response.credible_interval(avg, level)
    return posterior_columns(avg.t, avg.means, avg.sd, lo, hi)


def cmd_estimate(args) -> None:
    io.write_columns(args.out, estimate_from_report(args.fit, args.at, args.level))


# ---------------------------------------------------------------------------
# mmd
# ---------------------------------------------------------------------------


def cmd_mmd(args) -> None:
    ps = io.read_numeric(args.ps, ["ps_mean", "ps_var"])
    inputs = [GaussianInput(np.array([m]), np.array([v])) for m, v in zip(ps["ps_mean"], ps["ps_var"])]
    mat = mmd_matrix(inputs, args.gamma_sq, args.lengthscale)
    n = len(inputs)
    io.write_table(args.out, ["unit_index"] + [f"u_{j}" for j in range(n)],
                   ([i, *mat[i]] for i in range(n)))


# ---------------------------------------------------------------------------
# benchmark / plot-data
# ---------------------------------------------------------------------------

RECORD_FIELDS = ("method", "scenario", "replication", "seed", "cov90", "i90", "bias", "rmse",
                 "n_units", "n_samples", "error")


def load_scenario(path, seed: Optional[int] = None) -> evaluation.Scenario:
    raw = io.read_json(path)
    raw.pop("description", None)
    if seed is not None:
        raw["base_seed"] = seed
    try:
        return evaluation.Scenario.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid scenario {path}: {exc}")


def write_records(path, records) -> None:
    io.write_table(path, RECORD_FIELDS, ([getattr(r, f) for f in RECORD_FIELDS] for r in records))


def cmd_benchmark(args) -> None:
    sc = load_scenario(args.scenario, args.seed)
    if args.workers is not None:
        sc.workers = args.workers
    records = evaluation.run_experiment(sc)
    write_records(args.out, records)
    payload = {"scenario": sc.to_dict(), "records": [_finite(r.to_dict()) for r in records]}
    io.write_json(io.sidecar_path(args.out), payload)


def _finite(d: dict) -> dict:
    """Non-finite floats become null, recursively, so the JSON stays standard."""
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            v = _finite(v)
        elif isinstance(v, float) and not np.isfinite(v):
            v = None
        out[k] = v
    return out


def cmd_plot_data(args) -> None:
    cols = estimate_from_report(args.fit, "observed")
    side = io.read_json(io.sidecar_path(args.truth))
    oracle = simgen.make_oracle(side["config"], n_mc=args.n_mc, conditional=not args.marginal,
                                covariates=_sidecar_covariates(side["config"]))
    tau = oracle(cols["t"])
    io.write_columns(args.out, {"t": cols["t"], "adrf_mean": cols["adrf_mean"], "lo90": cols["lo90"],
                                "hi90": cols["hi90"], "tau_true": tau})


def _sidecar_covariates(config: dict):
    path = config.get("covariates_path")
    if not path:
        return None
    tags = dict(kv.split("=", 1) for kv in config["covariate_tags"].split(","))
    return simgen.load_covariates(path, tags["birthweight"], tags["gender"], tags["neonatal"],
                                  tags["cdc_days"])


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> Parser:
    p = Parser(prog="gpdr", description="GP dose-response estimation")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("simulate", help="generate a simulated dataset")
    s.add_argument("--dgp", choices=["full", "ihdp", "smooth"], required=True)
    s.add_argument("--n", type=int, default=250)
    s.add_argument("--mu", choices=["linear", "nonlinear"], default="nonlinear")
    s.add_argument("--effect", choices=["homogeneous", "heterogeneous"], default="homogeneous")
    s.add_argument("--surface", choices=["A", "B", "C"], default="A")
    s.add_argument("--pi-form", choices=["verbatim", "ancestor"], default="verbatim")
    s.add_argument("--covariates", help="CSV of real covariates (ihdp only)")
    s.add_argument("--tags", default="birthweight=birthweight,gender=gender,neonatal=neonatal,cdc_days=cdc_days",
                   help="role=column pairs for --covariates")
    s.add_argument("--n-mc", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit-ps", help="cross-fitted GP propensity scores")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="JSON with PropensityConfig fields and optional kernel_families")
    s.add_argument("--kernels", default="matern12", help="comma-separated candidate kernels")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_ps)

    s = sub.add_parser("fit-response", help="fit the response GP")
    s.add_argument("--data", required=True)
    s.add_argument("--ps", required=True)
    s.add_argument("--kernel", choices=VARIANT_TAGS, default="a-prbf")
    s.add_argument("--epochs", type=int, default=7000)
    s.add_argument("--lr", type=float, default=0.0025)
    s.add_argument("--level", type=float, default=0.90)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report", help="fit report JSON path (default: <out>.json)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_response)

    s = sub.add_parser("estimate", help="ADRF from a fit report")
    s.add_argument("--fit", required=True)
    s.add_argument("--at", default="observed", help="observed, a,b,c or lin:start:stop:count")
    s.add_argument("--level", type=float, default=0.90)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("mmd", help="pairwise MMD^2 between PS beliefs")
    s.add_argument("--ps", required=True)
    s.add_argument("--gamma-sq", "--gamma", dest="gamma_sq", type=float, default=1.0)
    s.add_argument("--lengthscale", type=float, default=1.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mmd)

    s = sub.add_parser("benchmark", help="run a scenario JSON")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seed", type=int, help="override the scenario base_seed")
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("plot-data", help="per-unit estimates next to the true ADRF")
    s.add_argument("--fit", required=True)
    s.add_argument("--truth", required=True, help="dataset CSV whose sidecar holds the DGP config")
    s.add_argument("--marginal", action="store_true", help="use the marginal rather than conditional ADRF")
    s.add_argument("--n-mc", type=int, default=100_000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot_data)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return 1
    except GPDRError as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return 2
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Gaussian-process dose-response estimation with uncertain propensity inputs."""

from .errors import GPDRError
from .kernels import GaussianInput, KernelParams, make_variant, VARIANT_TAGS
from .gp_core import FittedGP, GaussianPosterior, fit_exact_gp, posterior
from .propensity import PropensityConfig, cross_fitted_scores, select_propensity_model
from .response import (build_prior_spec, fit_response, adrf_posterior, credible_interval,
                       theta_batch)

__version__ = "0.1.0"

__all__ = [
    "GPDRError", "GaussianInput", "KernelParams", "make_variant", "VARIANT_TAGS",
    "FittedGP", "GaussianPosterior", "fit_exact_gp", "posterior",
    "PropensityConfig", "cross_fitted_scores", "select_propensity_model",
    "build_prior_spec", "fit_response", "adrf_posterior", "credible_interval", "theta_batch",
]

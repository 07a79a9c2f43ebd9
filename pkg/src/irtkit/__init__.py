"""Bayesian item response modeling: formula interface, adaptive HMC, and
posterior tooling."""

from ._wiener import USING_COMPILED
from .build import build_model, inspect_listing, predictor_values
from .data import ResponseTable, load_table, save_table
from .diagnostics import SummaryTable, compute_ess, compute_rhat, summarize
from .families import family_lookup
from .formula import ParseError, parse_model
from .postprocess import (
    LooResult,
    conditional_effects,
    extract_coef,
    hypothesis,
    loo_compare,
    pointwise_log_lik,
    posterior_predict,
    psis_loo,
)
from .priors import parse_prior
from .sampler import PosteriorDraws, SamplerControl, load_draws, sample, sample_target
from .simulate import SimDesign, canonical_formula, recovery_report, simulate_data

__version__ = "0.1.0"

__all__ = [
    "USING_COMPILED",
    "LooResult",
    "ParseError",
    "PosteriorDraws",
    "ResponseTable",
    "SamplerControl",
    "SimDesign",
    "SummaryTable",
    "build_model",
    "canonical_formula",
    "compute_ess",
    "compute_rhat",
    "conditional_effects",
    "extract_coef",
    "family_lookup",
    "hypothesis",
    "inspect_listing",
    "load_draws",
    "load_table",
    "loo_compare",
    "parse_model",
    "parse_prior",
    "pointwise_log_lik",
    "posterior_predict",
    "predictor_values",
    "psis_loo",
    "recovery_report",
    "sample",
    "sample_target",
    "save_table",
    "simulate_data",
    "summarize",
]

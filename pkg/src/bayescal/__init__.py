"""Bayesian calibration of computer codes.

Gaussian-process emulators, discrepancy modelling, two-phase MCMC,
sequential design and predictive validation, with a PV-style test code.
"""

from .design import Design, PcaTransform, build_design, maximin_lhs, pca_decorrelate, run_design
from .gp import GpModel, GpPosterior, KernelSpec, MeanBasis, fit_hyperparameters, gp_condition, q2_score
from .inference import (
    Chain, McmcSettings, PosteriorSummary, adaptive_mh, full_mle, least_squares_calibrate,
    metropolis_within_gibbs, modular_calibrate, posterior_summary, smle, two_phase_calibrate,
)
from .models import M1, M2, M3, M4, CalibModel, fit_emulator
from .priors import Fixed, Gamma, Normal, Uniform, default_priors, parse_prior
from .seqdesign import AugmentationTrace, augment_design, expected_improvement, sse_criterion
from .testbed import (
    FieldDataSet, PvSurrogateConfig, SyntheticScenario, analytic_codes, generate_field_data,
    morris_screening, pv_simulator, pv_surrogate,
)
from .validation import (
    PredictiveBand, ValidationReport, coverage_rate, cross_validate, energy_integral,
    posterior_predict, prior_predictive_band, rmse,
)

__version__ = "0.1.0"

__all__ = [
    "Design",
    "PcaTransform",
    "build_design",
    "maximin_lhs",
    "pca_decorrelate",
    "run_design",
    "GpModel",
    "GpPosterior",
    "KernelSpec",
    "MeanBasis",
    "fit_hyperparameters",
    "gp_condition",
    "q2_score",
    "Chain",
    "McmcSettings",
    "PosteriorSummary",
    "adaptive_mh",
    "full_mle",
    "least_squares_calibrate",
    "metropolis_within_gibbs",
    "modular_calibrate",
    "posterior_summary",
    "smle",
    "two_phase_calibrate",
    "M1",
    "M2",
    "M3",
    "M4",
    "CalibModel",
    "fit_emulator",
    "Fixed",
    "Gamma",
    "Normal",
    "Uniform",
    "default_priors",
    "parse_prior",
    "AugmentationTrace",
    "augment_design",
    "expected_improvement",
    "sse_criterion",
    "FieldDataSet",
    "PvSurrogateConfig",
    "SyntheticScenario",
    "analytic_codes",
    "generate_field_data",
    "morris_screening",
    "pv_simulator",
    "pv_surrogate",
    "PredictiveBand",
    "ValidationReport",
    "coverage_rate",
    "cross_validate",
    "energy_integral",
    "posterior_predict",
    "prior_predictive_band",
    "rmse",
]

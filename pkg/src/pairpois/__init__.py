"""Latent AR(1) Poisson count time-series models fitted by maximum
weighted pairwise likelihood, with robust (sandwich/HAC) standard
errors, CLIC model selection, and simulation-based prediction."""

from .errors import (
    DataFormatError,
    NotConvergedError,
    NumericalFailure,
    PairpoisError,
    SingularMatrixError,
)
from .estimation import (
    FitResult,
    INDEPENDENCE,
    PHI_ZERO,
    clic,
    default_hac_lags,
    fit,
    fit_restricted,
    moment_init,
    poisson_irls,
    robust_se,
    sensitivity_H,
    variability_J,
)
from .model import (
    CountSeries,
    PairWeights,
    PairwiseEvaluator,
    Params,
    RECTANGULAR,
    TRAPEZOIDAL,
    WorkingParams,
    autocorrelation,
    dispersion_index,
    make_weights,
    marginal_mean,
    marginal_var,
    pair_log_density,
    pairwise_loglik,
    pairwise_score,
    per_t_score,
    poisson_log_pmf,
)
from .oracle import GridSpec, full_loglik_filter, mc_full_likelihood, mc_pair_density
from .quadrature import BivariateRule, QuadRule, bivariate_normal_rule, gauss_hermite
from .scenarios import SCENARIOS, ScenarioSpec, run_scenario_study, simulate_scenario
from .simulate import PredictionBand, SimConfig, latent_paths, predict, simulate_replicates, simulate_series

__version__ = "0.1.0"

__all__ = [
    "BivariateRule",
    "CountSeries",
    "DataFormatError",
    "FitResult",
    "GridSpec",
    "INDEPENDENCE",
    "NotConvergedError",
    "NumericalFailure",
    "PHI_ZERO",
    "PairWeights",
    "PairpoisError",
    "PairwiseEvaluator",
    "Params",
    "PredictionBand",
    "QuadRule",
    "RECTANGULAR",
    "SCENARIOS",
    "ScenarioSpec",
    "SimConfig",
    "SingularMatrixError",
    "TRAPEZOIDAL",
    "WorkingParams",
    "autocorrelation",
    "bivariate_normal_rule",
    "clic",
    "default_hac_lags",
    "dispersion_index",
    "fit",
    "fit_restricted",
    "full_loglik_filter",
    "gauss_hermite",
    "latent_paths",
    "make_weights",
    "marginal_mean",
    "marginal_var",
    "mc_full_likelihood",
    "mc_pair_density",
    "moment_init",
    "pair_log_density",
    "pairwise_loglik",
    "pairwise_score",
    "per_t_score",
    "poisson_irls",
    "poisson_log_pmf",
    "predict",
    "robust_se",
    "run_scenario_study",
    "sensitivity_H",
    "simulate_replicates",
    "simulate_scenario",
    "simulate_series",
    "variability_J",
]

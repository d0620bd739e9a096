"""Doubly robust average-effect estimation benchmarked by simulation.

Four estimators of the average causal effect (inverse probability
weighting, g-computation, augmented IPW, targeted minimum loss) over
interchangeable nuisance models (parametric GLMs or a stacked ensemble),
plus the Monte Carlo harness that compares them across correct and
misspecified covariate sets.
"""

from .dgp import Dataset, DgpParams, default_params, gen_trial, transform_confounders
from .estimators import (EstimateResult, NuisanceFit, aipw_estimate,
                         gcomp_estimate, ipw_estimate, tmle_estimate,
                         truncate_propensity)
from .harness import ScenarioConfig, SummaryRow, run_grid, run_replicate, summarize
from .inference import (ConfidenceInterval, bootstrap_se, if_se, ipw_robust_se,
                        normal_quantile, wald_ci)
from .learners import (Ensemble, Learner, default_library, fit_bagged_trees,
                       fit_knn, fit_regression_tree, fit_superlearner)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DgpParams", "default_params", "gen_trial", "transform_confounders",
    "EstimateResult", "NuisanceFit", "aipw_estimate", "gcomp_estimate",
    "ipw_estimate", "tmle_estimate", "truncate_propensity",
    "ScenarioConfig", "SummaryRow", "run_grid", "run_replicate", "summarize",
    "ConfidenceInterval", "bootstrap_se", "if_se", "ipw_robust_se",
    "normal_quantile", "wald_ci",
    "Ensemble", "Learner", "default_library", "fit_bagged_trees", "fit_knn",
    "fit_regression_tree", "fit_superlearner",
    "__version__",
]

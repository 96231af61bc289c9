"""Mixed-membership of experts stochastic blockmodel, fitted by variational Bayes."""

from .beta import NumericalError, estimate_beta
from .bootstrap import BootstrapError, align_groups, bootstrap_beta, summarize
from .diagnostics import eom_scores, geodesic_distribution, gof_compare
from .generator import GenerativeSpec, sample_network, spec_from_fit
from .network import (
    CovariateMatrix,
    InputError,
    Network,
    load_adjacency_matrix,
    load_covariates,
    load_edge_list,
    make_folds,
)
from .selection import cross_validate, holdout_loglik, link_probabilities, roc_auc
from .vb import FitResult, ModelConfig, fit

__version__ = "0.1.0"

__all__ = [
    "BootstrapError", "CovariateMatrix", "FitResult", "GenerativeSpec", "InputError",
    "ModelConfig", "Network", "NumericalError", "align_groups", "bootstrap_beta",
    "cross_validate", "eom_scores", "estimate_beta", "fit", "geodesic_distribution",
    "gof_compare", "holdout_loglik", "link_probabilities", "load_adjacency_matrix",
    "load_covariates", "load_edge_list", "make_folds", "roc_auc", "sample_network",
    "spec_from_fit", "summarize",
]

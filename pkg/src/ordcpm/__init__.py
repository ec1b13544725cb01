"""Bayesian cumulative probability models for continuous and mixed ordered
outcomes: ordered-category encoding, Dirichlet-induced cutpoint priors, a
no-U-turn sampler, posterior conditional functionals, model comparison, and
a simulation study harness.
"""

from .core import (
    CpmData,
    CpmParams,
    OrdinalEncoding,
    PriorSpec,
    UnconstrainedParams,
    alpha_schedule,
    cell_prob,
    cell_probs,
    dirichlet_log_density,
    encode_outcomes,
    grad_log_posterior,
    induced_prior_log_density,
    log_likelihood,
    log_posterior,
    make_data,
    make_target,
    to_constrained,
    to_unconstrained,
)
from .kernel import BACKEND as KERNEL_BACKEND
from .links import LinkFamily, cdf, get_link, pdf, quantile

__version__ = "0.1.0"

__all__ = [
    "LinkFamily",
    "get_link",
    "cdf",
    "pdf",
    "quantile",
    "OrdinalEncoding",
    "CpmData",
    "CpmParams",
    "UnconstrainedParams",
    "PriorSpec",
    "encode_outcomes",
    "make_data",
    "alpha_schedule",
    "cell_prob",
    "cell_probs",
    "log_likelihood",
    "dirichlet_log_density",
    "induced_prior_log_density",
    "to_unconstrained",
    "to_constrained",
    "log_posterior",
    "grad_log_posterior",
    "make_target",
    "KERNEL_BACKEND",
    "__version__",
]

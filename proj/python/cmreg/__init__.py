"""Bayesian meta-regression of multi-arm, multi-time trial contrasts."""

from ._cmreg import (
    ConfigError,
    Dataset,
    Model,
    NumericalError,
    ParseError,
    ValidationError,
    between_covariance,
    default_sim_config,
    gelman_rubin,
    monte_carlo_se,
    mvn_logpdf,
    shrink_factor_trace,
    simulate,
)

__all__ = [
    "ConfigError",
    "Dataset",
    "Model",
    "NumericalError",
    "ParseError",
    "ValidationError",
    "between_covariance",
    "default_sim_config",
    "gelman_rubin",
    "monte_carlo_se",
    "mvn_logpdf",
    "shrink_factor_trace",
    "simulate",
]

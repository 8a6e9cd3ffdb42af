"""Adaptive Metropolis-within-Gibbs sampling and posterior diagnostics."""

from .diagnostics import (
    ConvergenceReport,
    PosteriorSummary,
    autocorrelation,
    check_convergence,
    effective_sample_size,
    split_rhat,
    summarize,
)
from .priors import PriorSpec, parse_prior
from .sampler import (
    AdaptiveScales,
    ChainRandom,
    LogDensityModel,
    PosteriorSample,
    SamplerConfig,
    run_chains,
)

__all__ = [
    "AdaptiveScales",
    "ChainRandom",
    "ConvergenceReport",
    "LogDensityModel",
    "PosteriorSample",
    "PosteriorSummary",
    "PriorSpec",
    "SamplerConfig",
    "autocorrelation",
    "check_convergence",
    "effective_sample_size",
    "parse_prior",
    "run_chains",
    "split_rhat",
    "summarize",
]

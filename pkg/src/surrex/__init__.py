"""Surrogate endpoint validation from randomised and real-world evidence.

Subpackages and modules:

- :mod:`surrex.evidence` study records and evidence classes
- :mod:`surrex.matching` aggregate-data matching of single-arm studies
- :mod:`surrex.ipd` pseudo individual patient data and Cox fits
- :mod:`surrex.mcmc` the Metropolis-within-Gibbs sampler and diagnostics
- :mod:`surrex.surrogacy` the surrogacy models and their criteria
- :mod:`surrex.crossval` take-one-out cross-validation
- :mod:`surrex.pipeline` / :mod:`surrex.cli` orchestration
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigurationError,
    InputError,
    NumericError,
    SurrexError,
    ValidationError,
)

__all__ = [
    "__version__",
    "ConfigurationError",
    "InputError",
    "NumericError",
    "SurrexError",
    "ValidationError",
]

"""Exception hierarchy shared by every stage.

Each class carries the CLI exit code it maps to so the command-line layer
never has to guess.
"""

from __future__ import annotations


class SurrexError(Exception):
    exit_code = 1


class ValidationError(SurrexError):
    """Bad input values, schema violations, or inconsistent configuration."""

    exit_code = 2


class ConfigurationError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class RangeError(ValidationError):
    pass


class ReconstructionError(ValidationError):
    pass


class NumericError(SurrexError):
    """A numerical procedure failed (non-finite density, divergence, ...)."""

    exit_code = 3


class InitializationError(NumericError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message: str, direction: int = 0):
        super().__init__(message)
        self.direction = direction


class InputError(SurrexError):
    """Missing or unreadable files."""

    exit_code = 4

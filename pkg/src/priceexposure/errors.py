"""Exception hierarchy.

Input problems subclass :class:`InputError` (CLI exit code 2); numerical
degeneracies subclass :class:`DegeneracyError` (CLI exit code 3).
"""

from __future__ import annotations


class PriceExposureError(Exception):
    """Base class for all package errors."""


class InputError(PriceExposureError, ValueError):
    """Malformed or inconsistent user input."""


class DomainError(InputError):
    """A parameter lies outside its admissible range."""


class DimensionError(InputError):
    """Array shapes do not line up."""


class InsufficientPeriodsError(InputError):
    """The operation needs more time periods than were supplied."""


class ParseError(InputError):
    """A CSV or config file could not be parsed."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ConfigError(InputError):
    """Unknown or invalid key in a config file."""


class DegeneracyError(PriceExposureError, ArithmeticError):
    """A numerically degenerate design or fit."""


class WeakFirstStageError(DegeneracyError):
    """The instrument carries (numerically) no first-stage variation.

    Attributes
    ----------
    first_stage : float
        OLS slope of the transformed treatment on the transformed instrument,
        ``nan`` if the instrument itself is identically zero.
    """

    def __init__(self, message: str, first_stage: float = float("nan")):
        self.first_stage = first_stage
        super().__init__(f"{message} (first-stage coefficient {first_stage:.6g})")


class CollinearityError(DegeneracyError):
    """Regressor block is rank deficient after the fixed-effect transform."""

    def __init__(self, message: str, regressor: str | None = None):
        self.regressor = regressor
        super().__init__(message)


class DegenerateDesignError(DegeneracyError):
    """Estimand denominator is not positive, or a variance has no support."""


class MonteCarloError(DegeneracyError):
    """Too many replications had to be excluded."""

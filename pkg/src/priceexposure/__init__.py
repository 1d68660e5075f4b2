"""Estimation and design-based inference for price-exposure regional designs.

The instrument is ``Z[i, t] = A[i] * p[t]``: a fixed regional exposure times a
common aggregate price shock.
"""

from __future__ import annotations

from .errors import (
    CollinearityError,
    ConfigError,
    DegeneracyError,
    DegenerateDesignError,
    DimensionError,
    DomainError,
    InputError,
    InsufficientPeriodsError,
    MonteCarloError,
    ParseError,
    PriceExposureError,
    WeakFirstStageError,
)
from .panel import (
    InstrumentMatrix,
    Panel,
    PriceSystem,
    build_instrument,
    center_log_prices,
    demean,
    first_difference,
    within_transform,
)

__version__ = "0.1.0"

__all__ = [
    "CollinearityError",
    "ConfigError",
    "DegeneracyError",
    "DegenerateDesignError",
    "DimensionError",
    "DomainError",
    "InputError",
    "InsufficientPeriodsError",
    "InstrumentMatrix",
    "MonteCarloError",
    "Panel",
    "ParseError",
    "PriceExposureError",
    "PriceSystem",
    "WeakFirstStageError",
    "build_instrument",
    "center_log_prices",
    "demean",
    "first_difference",
    "within_transform",
    "__version__",
]

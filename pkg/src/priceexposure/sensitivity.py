"""Partial identification under bounded contamination.

If the contamination term lies in ``[b_lower, b_upper]``, the focal estimand
lies in ``[beta_hat - b_upper, beta_hat - b_lower]``.  Confidence intervals
follow the Imbens-Manski construction and the breakdown point is the
smallest symmetric contamination that brings a null value into the interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError, InputError

MAX_ITER = 200
ROOT_TOL = 1e-10
FORMS = ("symmetric", "bracketing")


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile(prob: float) -> float:
    """Inverse of :func:`normal_cdf` by bisection."""
    if not 0.0 < prob < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {prob}")
    lo, hi = -40.0, 40.0
    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        if normal_cdf(mid) < prob:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def identified_set(beta_hat: float, b_lower: float, b_upper: float) -> tuple[float, float]:
    """``[beta_hat - b_upper, beta_hat - b_lower]``."""
    if b_lower > b_upper:
        raise DomainError(f"b_lower ({b_lower}) exceeds b_upper ({b_upper})")
    return (beta_hat - b_upper, beta_hat - b_lower)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 0.5:
        raise DomainError(f"alpha must lie in (0, 0.5), got {alpha}")


def imbens_manski_constant(length: float, se: float, alpha: float = 0.05) -> float:
    """Solve ``Phi(length/se + C) - Phi(-C) = 1 - alpha`` for ``C``.

    The left side is increasing in ``C`` and the root lies in
    ``[z_{1-alpha}, z_{1-alpha/2}]``; bisection runs to ``1e-10``.
    """
    _check_alpha(alpha)
    if length < 0:
        raise DomainError("the identified-set length must be nonnegative")
    if not se > 0:
        raise DomainError("the standard error must be positive")
    ratio = length / se
    target = 1.0 - alpha

    def f(c: float) -> float:
        return normal_cdf(ratio + c) - normal_cdf(-c) - target

    lo = normal_quantile(1.0 - alpha)
    hi = normal_quantile(1.0 - alpha / 2.0)
    if f(lo) >= 0:
        return lo
    if f(hi) <= 0:
        return hi
    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < ROOT_TOL:
            break
    c = 0.5 * (lo + hi)
    if abs(f(c)) > ROOT_TOL:
        raise ArithmeticError(f"bisection did not converge (residual {f(c):.3g})")
    return c


def imbens_manski_bounds(beta_hat: float, se: float, b_lower: float, b_upper: float,
                         alpha: float = 0.05, form: str = "symmetric") -> tuple[float, float, float]:
    """Return ``(lower, upper, C)`` of the Imbens-Manski interval.

    ``form='symmetric'`` gives ``beta_hat -/+ C se``; ``form='bracketing'``
    gives ``[beta_hat - b_upper - C se, beta_hat - b_lower + C se]``.
    """
    if form not in FORMS:
        raise InputError(f"unknown interval form {form!r}; expected one of {FORMS}")
    lb, ub = identified_set(beta_hat, b_lower, b_upper)
    c = imbens_manski_constant(b_upper - b_lower, se, alpha)
    if form == "symmetric":
        return beta_hat - c * se, beta_hat + c * se, c
    return lb - c * se, ub + c * se, c


@dataclass(frozen=True)
class SensitivityResult:
    """Bounds, Imbens-Manski interval and breakdown point for one estimate."""

    beta_hat: float
    std_error: float
    b_lower: float
    b_upper: float
    bound_lower: float
    bound_upper: float
    im_constant: float
    im_interval: tuple[float, float]
    alpha: float
    form: str
    breakdown_point: float | None = None
    null_value: float = 0.0

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat,
            "std_error": self.std_error,
            "alpha": self.alpha,
            "b_lower": self.b_lower,
            "b_upper": self.b_upper,
            "identified_set": [self.bound_lower, self.bound_upper],
            "im_constant": self.im_constant,
            "im_interval": list(self.im_interval),
            "interval_form": self.form,
            "null_value": self.null_value,
            "breakdown_point": self.breakdown_point,
        }


def breakdown_point(beta_hat: float, se: float, alpha: float = 0.05, null_value: float = 0.0,
                    form: str = "bracketing", tol: float = 1e-12) -> float:
    """Smallest ``b >= 0`` whose interval for ``[-b, b]`` contains ``null_value``.

    The bracketing interval widens monotonically in ``b``, so bisection
    applies.  The symmetric form narrows as ``b`` grows (its constant falls
    toward the one-sided quantile), so it is scanned from the Wald interval
    and returns 0 or ``inf``.
    """
    if not se > 0:
        raise DomainError("the standard error must be positive")

    def covers(b: float) -> bool:
        lo, hi, _ = imbens_manski_bounds(beta_hat, se, -b, b, alpha, form)
        return lo <= null_value <= hi

    if covers(0.0):
        return 0.0
    if form == "symmetric":
        return math.inf
    lo, hi = 0.0, max(abs(beta_hat - null_value), se)
    while not covers(hi):
        hi *= 2.0
    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        if covers(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    return hi


def imbens_manski_interval(beta_hat: float, se: float, b_lower: float = 0.0, b_upper: float = 0.0,
                           alpha: float = 0.05, form: str = "symmetric",
                           null_value: float | None = 0.0) -> SensitivityResult:
    """Assemble a :class:`SensitivityResult`.

    The breakdown point uses the bracketing form (the symmetric form is not
    monotone in the contamination bound); pass ``null_value=None`` to skip it.
    """
    lb, ub = identified_set(beta_hat, b_lower, b_upper)
    lo, hi, c = imbens_manski_bounds(beta_hat, se, b_lower, b_upper, alpha, form)
    bp = None if null_value is None else breakdown_point(beta_hat, se, alpha, null_value, "bracketing")
    return SensitivityResult(beta_hat, se, b_lower, b_upper, lb, ub, c, (lo, hi), alpha, form, bp,
                             0.0 if null_value is None else null_value)

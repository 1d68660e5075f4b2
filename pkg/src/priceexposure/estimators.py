"""Point estimators for price-exposure designs.

All single-regressor fits reduce to ratios of cross-product sums over the
N x T grid after a fixed-effect transformation.  Sums use :func:`math.fsum`
(exactly rounded), so results do not depend on summation order or on how
work is split across processes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import (
    CollinearityError,
    DimensionError,
    InputError,
    InsufficientPeriodsError,
    WeakFirstStageError,
)
from .panel import FIXED_EFFECTS, Panel, PriceSystem, demean, first_difference

KINDS = ("two_sls", "reduced_form", "first_stage", "ols", "twfe_within", "twfe_first_diff")
WEAK_RATIO_TOL = 1e-12
RANK_TOL = 1e-10


def fsum_product(a: np.ndarray, b: np.ndarray) -> float:
    """Exactly rounded ``sum(a * b)``."""
    return math.fsum(np.multiply(a, b).ravel().tolist())


# --------------------------------------------------------------------------- validation


def check_fixed_effects(fixed_effects: str) -> str:
    if fixed_effects not in FIXED_EFFECTS:
        raise InputError(f"unknown fixed_effects {fixed_effects!r}; expected one of {FIXED_EFFECTS}")
    return fixed_effects


def check_kind(kind: str) -> str:
    if kind not in KINDS:
        raise InputError(f"unknown estimator kind {kind!r}; expected one of {KINDS}")
    return kind


def check_panel_prices(panel: Panel, prices: PriceSystem) -> None:
    """Raise if the panel and price system disagree on the number of periods."""
    if not isinstance(panel, Panel):
        raise InputError(f"expected a Panel, got {type(panel).__name__}")
    if not isinstance(prices, PriceSystem):
        raise InputError(f"expected a PriceSystem, got {type(prices).__name__}")
    if prices.n_periods != panel.n_periods:
        raise DimensionError(
            f"prices cover {prices.n_periods} periods but the panel has {panel.n_periods}")


def check_treatment(panel: Panel, kind: str) -> np.ndarray:
    if panel.treatment is None:
        raise InputError(f"estimator {kind!r} requires a treatment matrix")
    return panel.treatment


# --------------------------------------------------------------------------- specs/results


@dataclass(frozen=True, eq=False)
class EstimatorSpec:
    """Estimator configuration.

    ``extra_exposures`` holds ``(exposure, price_path)`` pairs whose products
    enter as additional exogenous regressors.  ``pooled_differences`` allows
    the first-difference form with more than two periods.
    """

    kind: str = "two_sls"
    fixed_effects: str = "two_way"
    extra_exposures: tuple = ()
    extra_names: tuple[str, ...] = ()
    pooled_differences: bool = False

    def __post_init__(self):
        check_kind(self.kind)
        check_fixed_effects(self.fixed_effects)
        pairs = tuple((np.asarray(a, dtype=float), np.asarray(p, dtype=float))
                      for a, p in self.extra_exposures)
        object.__setattr__(self, "extra_exposures", pairs)
        names = tuple(self.extra_names) or tuple(f"control_{k}" for k in range(len(pairs)))
        if len(names) != len(pairs):
            raise InputError("extra_names must match extra_exposures")
        object.__setattr__(self, "extra_names", names)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "fixed_effects": self.fixed_effects,
            "controls": list(self.extra_names),
            "pooled_differences": self.pooled_differences,
        }


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of one fit.

    Attributes
    ----------
    coefficient : float
        Focal coefficient.
    residuals : ndarray
        Structural residuals on the transformed grid.
    denominator : float
        ``sum(instrument * regressor) / n_obs``.
    instrument, regressor, response : ndarray
        Transformed instrument, regressor and outcome.  For OLS-type fits the
        instrument is the regressor itself.
    raw_instrument : ndarray
        Untransformed ``A * p`` on the residual grid, used by the canonical
        price-exposure variance.
    """

    kind: str
    fixed_effects: str
    coefficient: float
    residuals: np.ndarray
    denominator: float
    instrument: np.ndarray
    regressor: np.ndarray
    response: np.ndarray
    raw_instrument: np.ndarray
    coefficients: np.ndarray | None = None
    regressor_names: tuple[str, ...] = ("focal",)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return int(self.residuals.size)

    @property
    def shape(self) -> tuple[int, int]:
        return self.residuals.shape

    def to_dict(self) -> dict:
        n, t = self.shape
        out: dict[str, Any] = {
            "kind": self.kind,
            "fixed_effects": self.fixed_effects,
            "coefficient": float(self.coefficient),
            "n": int(n),
            "t": int(t),
            "denominator": float(self.denominator),
        }
        if self.coefficients is not None:
            out["coefficients"] = {k: float(v) for k, v in zip(self.regressor_names, self.coefficients)}
        out["diagnostics"] = {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                              for k, v in sorted(self.diagnostics.items())}
        return out


# --------------------------------------------------------------------------- core


def _instrument(panel: Panel, prices: PriceSystem) -> np.ndarray:
    return np.outer(panel.exposure, prices.focal)


def _ratio_fit(kind: str, fe: str, inst: np.ndarray, reg: np.ndarray, resp: np.ndarray,
               raw: np.ndarray, diagnostics: dict | None = None) -> FitResult:
    szz = fsum_product(inst, inst)
    szx = fsum_product(inst, reg)
    sxx = fsum_product(reg, reg)
    if szz == 0.0:
        raise WeakFirstStageError("the transformed instrument is identically zero")
    if abs(szx) <= WEAK_RATIO_TOL * math.sqrt(szz * sxx):
        raise WeakFirstStageError("instrument and regressor are numerically orthogonal",
                                  first_stage=szx / szz)
    coef = fsum_product(inst, resp) / szx
    resid = resp - coef * reg
    return FitResult(kind, fe, coef, resid, szx / resid.size, inst, reg, resp, raw,
                     diagnostics=dict(diagnostics or {}))


def _first_stage_diagnostics(zt: np.ndarray, xt: np.ndarray) -> dict:
    szz = fsum_product(zt, zt)
    pi = fsum_product(zt, xt) / szz
    v = xt - pi * zt
    meat = math.fsum(((zt * v) ** 2).ravel().tolist())
    se = math.sqrt(meat) / szz
    t_ratio = pi / se if se > 0 else math.inf
    return {"first_stage_coefficient": pi, "first_stage_t": t_ratio, "weak_instrument": bool(abs(t_ratio) < 1)}


def _warn_weak(diag: dict) -> None:
    if diag.get("weak_instrument"):
        warnings.warn(
            f"weak first stage: |t| = {abs(diag['first_stage_t']):.3g} < 1",
            RuntimeWarning,
            stacklevel=3,
        )


def fit_2sls(panel: Panel, prices: PriceSystem, spec: EstimatorSpec | None = None) -> FitResult:
    """Stacked just-identified 2SLS ``sum(Z~ Y~) / sum(Z~ X~)``.

    Raises
    ------
    WeakFirstStageError
        If the transformed instrument vanishes or is orthogonal to the
        transformed treatment.
    """
    spec = spec or EstimatorSpec("two_sls")
    if spec.extra_exposures:
        return fit_multiprice(panel, prices, EstimatorSpec("two_sls", spec.fixed_effects,
                                                           spec.extra_exposures, spec.extra_names))
    check_panel_prices(panel, prices)
    x = check_treatment(panel, "two_sls")
    fe = spec.fixed_effects
    z = _instrument(panel, prices)
    zt, xt, yt = demean(z, fe), demean(x, fe), demean(panel.outcome, fe)
    fit = _ratio_fit("two_sls", fe, zt, xt, yt, z)
    diag = _first_stage_diagnostics(zt, xt)
    _warn_weak(diag)
    fit.diagnostics.update(diag)
    return fit


def fit_reduced_form(panel: Panel, prices: PriceSystem, spec: EstimatorSpec | None = None) -> FitResult:
    """OLS of the transformed outcome on the transformed instrument."""
    spec = spec or EstimatorSpec("reduced_form")
    if spec.extra_exposures:
        return fit_multiprice(panel, prices, EstimatorSpec("reduced_form", spec.fixed_effects,
                                                           spec.extra_exposures, spec.extra_names))
    check_panel_prices(panel, prices)
    fe = spec.fixed_effects
    z = _instrument(panel, prices)
    zt = demean(z, fe)
    return _ratio_fit("reduced_form", fe, zt, zt, demean(panel.outcome, fe), z)


def fit_first_stage(panel: Panel, prices: PriceSystem, spec: EstimatorSpec | None = None) -> FitResult:
    """OLS of the transformed treatment on the transformed instrument."""
    spec = spec or EstimatorSpec("first_stage")
    x = check_treatment(panel, "first_stage")
    if spec.extra_exposures:
        y_panel = Panel(x, panel.exposure, x, panel.cluster_id, panel.region_labels, panel.period_labels)
        fit = fit_multiprice(y_panel, prices, EstimatorSpec("reduced_form", spec.fixed_effects,
                                                             spec.extra_exposures, spec.extra_names))
        return _relabel(fit, "first_stage")
    check_panel_prices(panel, prices)
    fe = spec.fixed_effects
    z = _instrument(panel, prices)
    zt = demean(z, fe)
    return _ratio_fit("first_stage", fe, zt, zt, demean(x, fe), z)


def fit_ols(panel: Panel, prices: PriceSystem | None = None, spec: EstimatorSpec | None = None) -> FitResult:
    """OLS of the transformed outcome on the transformed treatment.

    The regressor doubles as the instrument, so the price-exposure variance
    of an OLS fit is the time-clustered variance of ``X~ u``.
    """
    spec = spec or EstimatorSpec("ols")
    x = check_treatment(panel, "ols")
    if prices is not None:
        check_panel_prices(panel, prices)
    fe = spec.fixed_effects
    xt = demean(x, fe)
    return _ratio_fit("ols", fe, xt, xt, demean(panel.outcome, fe), xt)


def fit_twfe(panel: Panel, prices: PriceSystem, spec: EstimatorSpec | None = None,
             form: str | None = None) -> FitResult:
    """Two-way fixed-effects regression of ``Y`` on ``A * p``.

    ``form='within'`` double-demeans; ``form='first_diff'`` regresses
    cross-sectionally demeaned ``dY`` on ``dZ`` and needs ``T == 2`` unless
    ``spec.pooled_differences`` is set.
    """
    spec = spec or EstimatorSpec("twfe_within")
    if form is None:
        form = "first_diff" if spec.kind == "twfe_first_diff" else "within"
    check_panel_prices(panel, prices)
    t = panel.n_periods
    if t < 2:
        raise InsufficientPeriodsError(f"TWFE needs at least 2 periods, got {t}")
    z = _instrument(panel, prices)
    if form == "within":
        zt = demean(z, "two_way")
        return _ratio_fit("twfe_within", "two_way", zt, zt, demean(panel.outcome, "two_way"), z)
    if form != "first_diff":
        raise InputError(f"unknown TWFE form {form!r}")
    if t != 2 and not spec.pooled_differences:
        raise InputError(f"first-difference TWFE needs T = 2 (got {t}); set pooled_differences to pool")
    dz = first_difference(z)
    dzt = demean(dz, "time")
    dyt = demean(first_difference(panel.outcome), "time")
    return _ratio_fit("twfe_first_diff", "time", dzt, dzt, dyt, dz)


def _relabel(fit: FitResult, kind: str) -> FitResult:
    return FitResult(kind, fit.fixed_effects, fit.coefficient, fit.residuals, fit.denominator,
                     fit.instrument, fit.regressor, fit.response, fit.raw_instrument,
                     fit.coefficients, fit.regressor_names, fit.diagnostics)


def _rank_check(cols: list[np.ndarray], names: Sequence[str]) -> None:
    mat = np.column_stack([c.ravel() for c in cols])
    norms = np.linalg.norm(mat, axis=0)
    scale = norms.max() if norms.size else 0.0
    if scale == 0:
        raise CollinearityError("all regressors vanish after the fixed-effect transform", names[0])
    r = np.linalg.qr(mat, mode="r")
    diag = np.abs(np.diag(r))
    for k, d in enumerate(diag):
        if d <= RANK_TOL * scale:
            raise CollinearityError(
                f"regressor {names[k]!r} is collinear with the preceding regressors after the "
                f"fixed-effect transform", names[k])


def fit_multiprice(panel: Panel, prices: PriceSystem, spec: EstimatorSpec) -> FitResult:
    """Reduced form or 2SLS with additional price-exposure controls.

    Controls ``W_k = A_k * p_k`` enter as exogenous regressors.  The returned
    ``coefficients`` list the focal coefficient first; the scalar fields
    (instrument, regressor, residuals) are the focal block after partialling
    out the controls, so scalar variance formulas apply unchanged.

    Raises
    ------
    CollinearityError
        If a regressor is rank deficient after the transform (tolerance
        ``1e-10`` relative to the largest column norm).
    """
    check_panel_prices(panel, prices)
    if not spec.extra_exposures:
        raise InputError("fit_multiprice needs at least one extra exposure pair")
    if spec.kind not in ("two_sls", "reduced_form"):
        raise InputError("multi-price fits support kinds 'two_sls' and 'reduced_form'")
    fe = spec.fixed_effects
    n, t = panel.shape
    z = _instrument(panel, prices)
    zt = demean(z, fe)
    yt = demean(panel.outcome, fe)
    controls = []
    for k, (a, p) in enumerate(spec.extra_exposures):
        if a.shape != (n,) or p.shape != (t,):
            raise DimensionError(
                f"control {spec.extra_names[k]!r} needs an exposure of length {n} and a price path of length {t}")
        controls.append(demean(np.outer(a, p), fe))
    names = ("focal", *spec.extra_names)
    _rank_check([zt, *controls], names)
    w = np.column_stack([c.ravel() for c in controls])

    def partial(v: np.ndarray) -> np.ndarray:
        coef, *_ = np.linalg.lstsq(w, v.ravel(), rcond=None)
        return (v.ravel() - w @ coef).reshape(n, t)

    zp = partial(zt)
    if spec.kind == "two_sls":
        xt = demean(check_treatment(panel, "two_sls"), fe)
        _rank_check([xt, *controls], names)
        regp = partial(xt)
    else:
        regp = zp
    yp = partial(yt)
    fit = _ratio_fit(spec.kind, fe, zp, regp, yp, zp)
    # control coefficients from the original-scale normal equations
    reg_mat = np.column_stack([(xt if spec.kind == "two_sls" else zt).ravel(), w])
    inst_mat = np.column_stack([zt.ravel(), w])
    full = np.linalg.solve(inst_mat.T @ reg_mat, inst_mat.T @ yt.ravel())
    full[0] = fit.coefficient
    diag = _first_stage_diagnostics(zp, regp) if spec.kind == "two_sls" else {}
    if diag:
        _warn_weak(diag)
    fit.diagnostics.update(diag)
    return FitResult(fit.kind, fe, fit.coefficient, fit.residuals, fit.denominator, zp, regp, yp, zp,
                     full, names, fit.diagnostics)


def fit(panel: Panel, prices: PriceSystem, spec: EstimatorSpec) -> FitResult:
    """Dispatch on ``spec.kind``."""
    dispatch = {
        "two_sls": fit_2sls,
        "reduced_form": fit_reduced_form,
        "first_stage": fit_first_stage,
        "ols": fit_ols,
        "twfe_within": fit_twfe,
        "twfe_first_diff": fit_twfe,
    }
    return dispatch[check_kind(spec.kind)](panel, prices, spec)


# --------------------------------------------------------------------------- sklearn-style API


class WithinTransformer(TransformerMixin, BaseEstimator):
    """Stateless fixed-effect transform of N x T matrices.

    Parameters
    ----------
    fixed_effects : {'none', 'region', 'time', 'two_way'}
    """

    def __init__(self, fixed_effects: str = "two_way"):
        self.fixed_effects = fixed_effects

    def fit(self, X, y=None):
        check_fixed_effects(self.fixed_effects)
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DimensionError("WithinTransformer expects an N x T matrix")
        self.shape_ = X.shape
        return self

    def transform(self, X):
        check_fixed_effects(self.fixed_effects)
        return demean(np.asarray(X, dtype=float), self.fixed_effects)


class PriceExposureRegression(BaseEstimator):
    """Estimator wrapper around the fit functions.

    Parameters
    ----------
    kind : str
        One of ``two_sls``, ``reduced_form``, ``first_stage``, ``ols``,
        ``twfe_within``, ``twfe_first_diff``.
    fixed_effects : str
        Fixed-effect transform.
    variance : str
        Variance method used for ``se_`` (see :mod:`priceexposure.inference`).

    Attributes
    ----------
    coef_ : float
    se_ : float
    fit_result_ : FitResult
    variance_report_ : VarianceReport
    """

    def __init__(self, kind: str = "two_sls", fixed_effects: str = "two_way",
                 variance: str = "price_exposure"):
        self.kind = kind
        self.fixed_effects = fixed_effects
        self.variance = variance

    def fit(self, X: Panel, y: PriceSystem):
        """Fit on panel ``X`` with price system ``y``."""
        from .inference import variance as compute_variance

        spec = EstimatorSpec(self.kind, self.fixed_effects)
        self.fit_result_ = fit(X, y, spec)
        self.coef_ = self.fit_result_.coefficient
        self.variance_report_ = compute_variance(self.fit_result_, X, y, self.variance)
        self.se_ = self.variance_report_.std_error
        return self

    def predict(self, X: Panel, y: PriceSystem | None = None) -> np.ndarray:
        """Fitted structural part ``coef_ * regressor`` on the untransformed grid."""
        if not hasattr(self, "coef_"):
            raise InputError("this estimator is not fitted yet")
        if self.kind in ("two_sls", "ols"):
            return self.coef_ * check_treatment(X, self.kind)
        if y is None:
            raise InputError("prediction from the instrument needs the price system")
        return self.coef_ * _instrument(X, y)

from __future__ import annotations

import warnings

import numpy as np
import pytest
from sklearn.base import clone

from priceexposure.errors import (
    CollinearityError,
    DimensionError,
    InputError,
    InsufficientPeriodsError,
    WeakFirstStageError,
)
from priceexposure.estimators import (
    EstimatorSpec,
    PriceExposureRegression,
    WithinTransformer,
    fit,
    fit_2sls,
    fit_first_stage,
    fit_multiprice,
    fit_ols,
    fit_reduced_form,
    fit_twfe,
)
from priceexposure.panel import Panel, PriceSystem

from conftest import dummy_residuals


def _dummies(n, t, fe):
    cols = [np.ones(n * t)]
    if fe in ("region", "two_way"):
        cols += [np.repeat(np.eye(n)[:, i], t) for i in range(1, n)]
    if fe in ("time", "two_way"):
        cols += [np.tile(np.eye(t)[:, j], n) for j in range(1, t)]
    return np.column_stack(cols)


def _iv_full(y, x, z, exog):
    """Just-identified IV with exogenous columns, solved as one linear system."""
    reg = np.column_stack([x, exog])
    ins = np.column_stack([z, exog])
    return np.linalg.lstsq(ins.T @ reg, ins.T @ y, rcond=None)[0]


@pytest.fixture
def design(small_design):
    pop, spec, prices, panel = small_design
    return panel, prices


@pytest.mark.parametrize("fe", ["region", "time", "two_way"])
def test_2sls_matches_dummy_variable_iv(design, fe):
    panel, prices = design
    n, t = panel.shape
    z = np.outer(panel.exposure, prices.focal).ravel()
    coef = _iv_full(panel.outcome.ravel(), panel.treatment.ravel(), z, _dummies(n, t, fe))[0]
    assert fit_2sls(panel, prices, EstimatorSpec("two_sls", fe)).coefficient == pytest.approx(coef, rel=1e-10)


def test_2sls_no_fixed_effects_is_raw_ratio(design):
    panel, prices = design
    z = np.outer(panel.exposure, prices.focal)
    expected = np.sum(z * panel.outcome) / np.sum(z * panel.treatment)
    got = fit_2sls(panel, prices, EstimatorSpec("two_sls", "none")).coefficient
    assert got == pytest.approx(expected, rel=1e-12)


def test_2sls_equals_reduced_form_over_first_stage(design):
    panel, prices = design
    rf = fit_reduced_form(panel, prices, EstimatorSpec("reduced_form", "region")).coefficient
    fs = fit_first_stage(panel, prices, EstimatorSpec("first_stage", "region")).coefficient
    iv = fit_2sls(panel, prices, EstimatorSpec("two_sls", "region")).coefficient
    assert iv == pytest.approx(rf / fs, rel=1e-12)


def test_ols_matches_lstsq(design):
    panel, _ = design
    xt = dummy_residuals(panel.treatment)
    yt = dummy_residuals(panel.outcome)
    expected = np.linalg.lstsq(xt.reshape(-1, 1), yt.ravel(), rcond=None)[0][0]
    assert fit_ols(panel).coefficient == pytest.approx(expected, rel=1e-10)


def test_residuals_orthogonal_to_instrument(design):
    panel, prices = design
    f = fit_2sls(panel, prices)
    assert abs(np.sum(f.instrument * f.residuals)) < 1e-9 * np.sum(np.abs(f.instrument * f.response))


def test_exact_recovery_without_noise():
    rng = np.random.default_rng(0)
    n, t = 8, 6
    a = rng.uniform(0.5, 1.5, n)
    p = rng.uniform(-1, 1, t)
    x = rng.normal(size=(n, 1)) + np.outer(a, p) * rng.uniform(0.5, 1, (n, 1)) + rng.normal(size=(1, t))
    y = 2.5 * x + rng.normal(size=(n, 1)) + rng.normal(size=(1, t))
    f = fit_2sls(Panel(y, a, x), PriceSystem(p))
    assert f.coefficient == pytest.approx(2.5, rel=1e-12)
    np.testing.assert_allclose(f.residuals, 0.0, atol=1e-12)


def test_twfe_within_equals_first_difference_at_two_periods():
    rng = np.random.default_rng(3)
    a = rng.uniform(0.5, 1.5, 30)
    p = np.array([-0.4, 0.7])
    y = rng.normal(size=(30, 2)) + np.outer(a, p)
    panel, prices = Panel(y, a), PriceSystem(p)
    w = fit_twfe(panel, prices, form="within").coefficient
    d = fit_twfe(panel, prices, form="first_diff").coefficient
    assert w == pytest.approx(d, rel=1e-12)


def test_twfe_matches_dummy_regression(design):
    panel, prices = design
    zt = dummy_residuals(np.outer(panel.exposure, prices.focal))
    yt = dummy_residuals(panel.outcome)
    expected = np.sum(zt * yt) / np.sum(zt * zt)
    assert fit(panel, prices, EstimatorSpec("twfe_within")).coefficient == pytest.approx(expected, rel=1e-10)


def test_first_difference_requires_two_periods(design):
    panel, prices = design
    with pytest.raises(InputError):
        fit_twfe(panel, prices, form="first_diff")
    pooled = fit_twfe(panel, prices, EstimatorSpec("twfe_first_diff", pooled_differences=True))
    assert np.isfinite(pooled.coefficient)


def test_twfe_single_period():
    with pytest.raises(InsufficientPeriodsError):
        fit_twfe(Panel(np.ones((3, 1)), np.ones(3)), PriceSystem(np.array([0.5])))


def test_constant_exposure_is_absorbed_by_time_effects():
    rng = np.random.default_rng(1)
    panel = Panel(rng.normal(size=(5, 4)), np.ones(5), rng.normal(size=(5, 4)))
    with pytest.raises(WeakFirstStageError):
        fit_2sls(panel, PriceSystem(rng.normal(size=4)))


@pytest.mark.filterwarnings("ignore:negative exposures")
def test_orthogonal_treatment_raises_weak_first_stage():
    a = np.array([1.0, -1.0])
    p = np.array([1.0, -1.0])
    x = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(WeakFirstStageError):
        fit_2sls(Panel(np.ones((2, 2)), a, x), PriceSystem(p), EstimatorSpec("two_sls", "none"))


def test_weak_first_stage_warns():
    rng = np.random.default_rng(5)
    n, t = 40, 40
    a = rng.uniform(0.5, 1.5, n)
    p = rng.uniform(-1, 1, t)
    zt = dummy_residuals(np.outer(a, p))
    v = rng.normal(size=(n, t))
    x = v - (np.sum(v * zt) / np.sum(zt * zt) - 1e-6) * zt
    with pytest.warns(RuntimeWarning, match="weak first stage"):
        f = fit_2sls(Panel(rng.normal(size=(n, t)), a, x), PriceSystem(p))
    assert f.diagnostics["weak_instrument"]


def test_strong_first_stage_does_not_warn(design):
    panel, prices = design
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        f = fit_2sls(panel, prices)
    assert not f.diagnostics["weak_instrument"]


def test_missing_treatment_and_period_mismatch(design):
    panel, prices = design
    with pytest.raises(InputError):
        fit_2sls(Panel(panel.outcome, panel.exposure), prices)
    with pytest.raises(DimensionError):
        fit_2sls(panel, PriceSystem(prices.log_prices[:, :-1]))


def test_unknown_kind_and_fixed_effects():
    with pytest.raises(InputError):
        EstimatorSpec("gmm")
    with pytest.raises(InputError):
        EstimatorSpec("two_sls", "county")


class TestMultiPrice:
    def _setup(self, design):
        panel, prices = design
        p2 = prices.log_prices[1]
        a2 = np.linspace(0.2, 1.0, panel.n_regions)
        return panel, prices, a2, p2

    @pytest.mark.parametrize("kind", ["two_sls", "reduced_form"])
    def test_matches_full_system(self, design, kind):
        panel, prices, a2, p2 = self._setup(design)
        n, t = panel.shape
        spec = EstimatorSpec(kind, "two_way", ((a2, p2),), ("second",))
        f = fit_multiprice(panel, prices, spec)
        z = np.outer(panel.exposure, prices.focal).ravel()
        w = np.outer(a2, p2).ravel()
        exog = np.column_stack([w, _dummies(n, t, "two_way")])
        x = panel.treatment.ravel() if kind == "two_sls" else z
        full = _iv_full(panel.outcome.ravel(), x, z, exog)
        assert f.coefficient == pytest.approx(full[0], rel=1e-9)
        assert f.coefficients[1] == pytest.approx(full[1], rel=1e-8)
        assert f.regressor_names == ("focal", "second")

    def test_collinear_control_is_named(self, design):
        panel, prices, a2, _ = self._setup(design)
        spec = EstimatorSpec("reduced_form", "two_way", ((2.0 * panel.exposure, prices.focal),), ("dup",))
        with pytest.raises(CollinearityError) as err:
            fit_multiprice(panel, prices, spec)
        assert err.value.regressor == "dup"

    def test_dispatch_through_fit_2sls(self, design):
        panel, prices, a2, p2 = self._setup(design)
        spec = EstimatorSpec("two_sls", "two_way", ((a2, p2),))
        assert fit_2sls(panel, prices, spec).coefficient == fit_multiprice(panel, prices, spec).coefficient

    def test_bad_control_shape(self, design):
        panel, prices, a2, p2 = self._setup(design)
        with pytest.raises(DimensionError):
            fit_multiprice(panel, prices, EstimatorSpec("reduced_form", "two_way", ((a2[:-1], p2),)))


class TestSklearnApi:
    def test_params_and_clone(self):
        est = PriceExposureRegression(kind="ols", fixed_effects="region", variance="ehw")
        assert est.get_params() == {"kind": "ols", "fixed_effects": "region", "variance": "ehw"}
        assert clone(est).get_params() == est.get_params()

    def test_fit_sets_attributes(self, design):
        panel, prices = design
        est = PriceExposureRegression().fit(panel, prices)
        assert est.coef_ == fit_2sls(panel, prices).coefficient
        assert est.se_ > 0
        np.testing.assert_allclose(est.predict(panel), est.coef_ * panel.treatment)

    def test_predict_before_fit(self, design):
        with pytest.raises(InputError):
            PriceExposureRegression().predict(design[0])

    def test_within_transformer(self, design):
        panel, _ = design
        out = WithinTransformer("two_way").fit_transform(panel.outcome)
        np.testing.assert_allclose(out, dummy_residuals(panel.outcome), atol=1e-10)
        with pytest.raises(InputError):
            WithinTransformer("bogus").fit(panel.outcome)

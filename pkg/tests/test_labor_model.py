from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from priceexposure.errors import DimensionError, DomainError
from priceexposure.labor_model import (
    LaborModelParams,
    compute_delta,
    compute_kappa,
    compute_lambda,
    compute_wage_elasticity,
    simulate_structural_first_stage,
    sweep_phi,
    threshold_phi,
)
from priceexposure.panel import PriceSystem


def worked_example(phi=0.1) -> LaborModelParams:
    # q: sigma 2, theta .5; r: sigma 5, theta .5, rho 1; internal sigma 2, theta .5
    return LaborModelParams(sigma=[2.0, 5.0], theta=[0.5, 0.5], phi=[phi], shares=[0.2, 0.7, 0.1], rho=[1.0, 1.0])


class TestDelta:
    def test_theta_to_one(self):
        assert compute_delta(2.0, 1 - 1e-12) == pytest.approx(1.0, abs=1e-11)

    @pytest.mark.parametrize("sigma,expected", [(2.0, 2 / 3), (5.0, 1 / 3)])
    def test_hand_values(self, sigma, expected):
        assert compute_delta(sigma, 0.5) == pytest.approx(expected, rel=1e-15)

    @pytest.mark.parametrize("sigma,theta", [(1.0, 0.5), (2.0, 0.0), (2.0, 1.0), (0.5, 0.5)])
    def test_domain(self, sigma, theta):
        with pytest.raises(DomainError):
            compute_delta(sigma, theta)

    def test_monotone_in_parameters(self):
        sig = np.linspace(1.1, 10, 40)
        th = np.linspace(0.05, 0.95, 40)
        s, t = np.meshgrid(sig, th)
        d = compute_delta(s, t)
        assert np.all(np.diff(d, axis=0) > 0)  # increasing in theta
        assert np.all(np.diff(d, axis=1) < 0)  # decreasing in sigma
        assert np.all((d > 0) & (d < 1))


class TestLambda:
    def test_internal_only(self):
        p = LaborModelParams(sigma=[2.0], theta=[0.5], phi=[0.1], shares=[0.0, 1.0], rho=[1.0])
        assert compute_lambda(p)[0] == pytest.approx(0.1 + 4 / 3, rel=1e-15)

    def test_worked_example(self):
        # 0.1 + 0.2*2*(2/3) + 0.7*5*(1/3) + 0.1*2*(2/3)
        assert compute_lambda(worked_example())[0] == pytest.approx(5 / 3, rel=1e-14)

    def test_bad_shares(self):
        with pytest.raises(DomainError):
            LaborModelParams(sigma=[2.0], theta=[0.5], phi=[1.0], shares=[0.5, 0.4], rho=[1.0])

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            LaborModelParams(sigma=[2.0, 3.0], theta=[0.5], phi=[1.0], shares=[0.5, 0.5], rho=[1.0])


class TestWageElasticity:
    def test_unexposed_region(self):
        p = LaborModelParams(sigma=[2.0, 3.0], theta=[0.5, 0.5], phi=[1.0], shares=[0.0, 0.4, 0.6], rho=[1.0, 0.0])
        assert compute_wage_elasticity(p, 0)[0] == 0.0

    def test_worked_example(self):
        # (0.2*1*(2/3) + 0.7*4*(1/3)) / (5/3) = 0.64
        assert compute_wage_elasticity(worked_example(), 0)[0] == pytest.approx(0.64, rel=1e-14)

    def test_homogeneous_in_rho(self):
        base = LaborModelParams(sigma=[2.0, 4.0, 6.0], theta=[0.3, 0.5, 0.7], phi=[0.4, 1.2],
                                shares=[[0.2, 0.3, 0.1, 0.4], [0.1, 0.1, 0.6, 0.2]], rho=[1.0, 0.4, 0.7])
        # doubling every tradable loading (own included) doubles the elasticity
        s1 = compute_wage_elasticity(base, 0)
        doubled = LaborModelParams(sigma=base.sigma, theta=base.theta, phi=base.phi, shares=base.shares,
                                   rho=2 * base.rho)
        pull2 = doubled.shares[:, :-1] @ ((doubled.sigma - 1) * compute_delta(doubled.sigma, doubled.theta) * doubled.rho)
        np.testing.assert_allclose(pull2 / compute_lambda(doubled), 2 * s1, rtol=1e-14)


class TestKappa:
    def test_no_exposure(self):
        p = LaborModelParams(sigma=[2.0], theta=[0.5], phi=[1.0], shares=[0.0, 1.0], rho=[1.0])
        prof = compute_kappa(p, 0)
        assert prof.kappa[0] == pytest.approx(1 / 3, rel=1e-15)
        assert prof.monotone[0]

    def test_worked_example_negative(self):
        prof = compute_kappa(worked_example(), 0)
        assert prof.exposure_index[0] == pytest.approx(0.64)
        assert prof.threshold == 0.5
        assert prof.kappa[0] < 0
        assert not prof.monotone[0]
        # (sigma-1) theta delta [1 - 2 * 0.64] = 0.5 * 2/3 * (-0.28)
        assert prof.kappa[0] == pytest.approx(0.5 * (2 / 3) * (1 - 2 * 0.64), rel=1e-13)

    def test_kappa_e_without_own_share(self):
        p = LaborModelParams(sigma=[3.0, 2.0], theta=[0.4, 0.5], phi=[0.5], shares=[0.0, 0.5, 0.5],
                             rho=[1.0, 0.3], capital=2.0, labor=3.0, exposure=1.5)
        prof = compute_kappa(p, 0)
        d = compute_delta(3.0, 0.4)
        x0 = 1.5 * 2.0 ** 0.6 * 3.0 ** 0.4
        assert prof.alpha[0] == pytest.approx(x0, rel=1e-14)
        assert prof.kappa_E[0] == pytest.approx(x0 * (1 + 2 * 0.4 * d), rel=1e-14)

    def test_elasticity_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            k = 3
            shares = rng.dirichlet(np.ones(k + 1), size=4)
            p = LaborModelParams(sigma=rng.uniform(1.2, 8, k), theta=rng.uniform(0.1, 0.9, k),
                                 phi=rng.uniform(0.05, 3, 4), shares=shares,
                                 rho=np.r_[1.0, rng.uniform(-1, 1, k - 1)],
                                 efficiency=rng.uniform(0.5, 2, (4, k)), capital=rng.uniform(0.5, 2, (4, k)),
                                 labor=rng.uniform(0.5, 2, (4, k)), exposure=rng.uniform(0.5, 2, (4, k)))
            prof = compute_kappa(p, 0)
            np.testing.assert_allclose(prof.kappa_tilde / prof.alpha, prof.output_elasticity, rtol=0, atol=1e-12)
            np.testing.assert_array_equal(prof.monotone, prof.kappa > 0)

    def test_nonpositive_capacity(self):
        p = LaborModelParams(sigma=[2.0], theta=[0.5], phi=[1.0], shares=[0.5, 0.5], rho=[1.0], capital=0.0)
        with pytest.raises(DomainError):
            compute_kappa(p, 0)


class TestThreshold:
    def test_sweep_flips_at_threshold(self):
        p = worked_example()
        phi_star = threshold_phi(p, 0)[0]
        # pull = 0.2*(2/3) + 0.7*(4/3) = 16/15, rest = 0.2*(4/3) + 0.7*(5/3) + 0.1*(4/3) = 47/30,
        # so S = 1/2 at phi = (16/15) * 2 - 47/30 = 17/30
        assert phi_star == pytest.approx(17 / 30, rel=1e-13)
        below = sweep_phi(p, [phi_star * (1 - 1e-9)], 0, 0)[0]
        above = sweep_phi(p, [phi_star * (1 + 1e-9)], 0, 0)[0]
        assert below["kappa"] < 0 < above["kappa"]
        assert not below["monotone"] and above["monotone"]

    @settings(max_examples=1000, deadline=None)
    @given(st.floats(1.05, 20), st.floats(0.05, 0.95), st.floats(1e-3, 10), st.floats(0.0, 1.0),
           st.floats(1.05, 20), st.floats(0.05, 0.95))
    def test_single_tradable_never_flips(self, sigma, theta, phi, share, sig0, th0):
        p = LaborModelParams(sigma=[sigma], theta=[theta], phi=[phi], shares=[share, 1 - share], rho=[1.0],
                             sigma_internal=sig0, theta_internal=th0)
        prof = compute_kappa(p, 0)
        assert prof.exposure_index[0] <= prof.threshold
        assert prof.monotone[0] and prof.kappa[0] > 0
        assert np.isnan(threshold_phi(p, 0)[0])


class TestSimulation:
    def test_zero_prices_give_alpha(self):
        p = worked_example()
        prof = compute_kappa(p, 0)
        x = simulate_structural_first_stage(p, PriceSystem(np.zeros((2, 5))))
        np.testing.assert_array_equal(x, np.repeat(prof.alpha[:, None], 5, axis=1))

    def test_slope_is_a_kappa(self):
        p = LaborModelParams(sigma=[2.0, 5.0], theta=[0.5, 0.5], phi=[0.1, 2.0], shares=[[0.2, 0.7, 0.1]] * 2,
                             rho=[1.0, 1.0], exposure=[[2.0, 1.0], [0.5, 1.0]])
        prof = compute_kappa(p, 0)
        x0 = simulate_structural_first_stage(p, PriceSystem(np.zeros((2, 1))))
        x1 = simulate_structural_first_stage(p, PriceSystem(np.r_[1.0, 0.0][:, None]))
        np.testing.assert_allclose((x1 - x0)[:, 0], p.exposure[:, 0] * prof.kappa, rtol=1e-14)

    def test_regression_recovers_weighted_kappa(self):
        rng = np.random.default_rng(1)
        n, t = 8, 20000
        p = LaborModelParams(sigma=[3.0], theta=[0.5], phi=rng.uniform(0.2, 2, n),
                             shares=np.column_stack([s := rng.uniform(0.1, 0.9, n), 1 - s]), rho=[1.0],
                             exposure=rng.uniform(0.5, 1.5, (n, 1)))
        prof = compute_kappa(p, 0)
        prices = PriceSystem(rng.uniform(-1, 1, (1, t)))
        x = simulate_structural_first_stage(p, prices, rng_seed=5, noise_sd=0.3)
        z = np.outer(p.exposure[:, 0], prices.focal)
        zc, xc = z - z.mean(1, keepdims=True), x - x.mean(1, keepdims=True)
        slope = (zc * xc).sum() / (zc * zc).sum()
        a2 = p.exposure[:, 0] ** 2
        assert slope == pytest.approx((a2 * prof.kappa).sum() / a2.sum(), abs=0.01)

    def test_seeded_and_region_streams(self):
        p = LaborModelParams(sigma=[2.0], theta=[0.5], phi=[1.0, 2.0], shares=[[0.5, 0.5]] * 2, rho=[1.0])
        prices = PriceSystem(np.zeros((1, 4)))
        a = simulate_structural_first_stage(p, prices, rng_seed=3, noise_sd=1.0)
        b = simulate_structural_first_stage(p, prices, rng_seed=3, noise_sd=1.0)
        np.testing.assert_array_equal(a, b)
        one = LaborModelParams(sigma=[2.0], theta=[0.5], phi=[1.0], shares=[[0.5, 0.5]], rho=[1.0])
        c = simulate_structural_first_stage(one, prices, rng_seed=3, noise_sd=1.0)
        np.testing.assert_array_equal(a[0], c[0])

    def test_shock_shape_checked(self):
        with pytest.raises(DimensionError):
            simulate_structural_first_stage(worked_example(), PriceSystem(np.zeros((2, 3))), np.zeros((2, 3)))

"""Finite-population estimands and their causal decompositions.

Estimands are ratios of conditional expectations given the population,
``E[sum Z Y] / E[sum Z X]``, evaluated with the analytic price moments of
the generating process (never sample moments).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dgp import FinitePopulation, PriceProcessSpec
from .errors import DegenerateDesignError, DimensionError, InputError
from .panel import PriceSystem

WEIGHT_JSON_LIMIT = 10_000
CONVEX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EstimandDecomposition:
    """Additive decomposition ``total = main + contamination_price + contamination_ge``.

    Attributes
    ----------
    weights_main : ndarray, shape (N, T)
        Weights on the focal effects.
    weights_cross : ndarray, shape (N, S-1, T)
        Price co-movement weights on the other sectors' effects.
    weights_ge : ndarray, shape (N, S, T)
        General-equilibrium weights on each sector's effect.
    denominator : float
        Sum of the normalising weights (must be positive).
    """

    kind: str
    focal: int
    main_term: float
    contamination_price: float
    contamination_ge: float
    weights_main: np.ndarray
    weights_cross: np.ndarray
    weights_ge: np.ndarray
    denominator: float
    convex: bool
    weakly_causal: bool

    @property
    def total(self) -> float:
        return self.main_term + self.contamination_price + self.contamination_ge

    @property
    def value(self) -> float:
        return self.total

    def to_dict(self, include_weights: bool | None = None) -> dict:
        n, t = self.weights_main.shape
        out = {
            "kind": self.kind,
            "focal_sector": int(self.focal),
            "total": float(self.total),
            "main_term": float(self.main_term),
            "contamination_price": float(self.contamination_price),
            "contamination_ge": float(self.contamination_ge),
            "denominator": float(self.denominator),
            "convex": bool(self.convex),
            "weakly_causal": bool(self.weakly_causal),
        }
        if include_weights is None:
            include_weights = n * t <= WEIGHT_JSON_LIMIT
        if include_weights:
            out["weights_main"] = self.weights_main.tolist()
            out["weights_cross"] = self.weights_cross.tolist()
            out["weights_ge"] = self.weights_ge.tolist()
        else:
            out["weights_omitted"] = f"N*T = {n * t} exceeds {WEIGHT_JSON_LIMIT}"
        return out


def price_moments(prices: PriceSystem | PriceProcessSpec, n_periods: int,
                  focal: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(var_focal (T,), cov_with_focal (S, T))`` from analytic moments."""
    if isinstance(prices, PriceProcessSpec):
        cov = prices.covariances_with(focal, n_periods)
    elif isinstance(prices, PriceSystem):
        if focal == prices.focal_sector and prices.covariances_with_focal is not None:
            cov = np.asarray(prices.covariances_with_focal)
        elif prices.process is not None:
            cov = prices.process.covariances_with(focal, n_periods)
        else:
            raise InputError("the price system carries no analytic moments")
    else:
        raise InputError(f"expected a PriceSystem or PriceProcessSpec, got {type(prices).__name__}")
    if cov.shape[1] != n_periods:
        raise DimensionError(f"price moments cover {cov.shape[1]} periods, population has {n_periods}")
    return cov[focal], cov


def _ge_loadings(pop: FinitePopulation, cov: np.ndarray) -> np.ndarray:
    """``A_iq sum_{s' != s} gamma_iss' Cov(p_q, p_s')`` as N x S x T."""
    n, s = pop.beta.shape
    t = cov.shape[1]
    if pop.gamma is None:
        return np.zeros((n, s, t))
    return pop.exposure[:, pop.focal][:, None, None] * np.einsum("isk,kt->ist", pop.gamma, cov)


def _finish(kind: str, pop: FinitePopulation, main_w: np.ndarray, cross_w: np.ndarray,
            ge_w: np.ndarray, denom_w: np.ndarray, convex: bool) -> EstimandDecomposition:
    q = pop.focal
    denom = math.fsum(denom_w.ravel().tolist())
    if not denom > 0:
        raise DegenerateDesignError(
            f"estimand denominator is {denom:.6g}; the design has no positive first-stage variation")
    others = [s for s in range(pop.n_sectors) if s != q]
    beta_q = pop.beta[:, q][:, None]
    main = math.fsum((main_w * beta_q).ravel().tolist()) / denom
    price = math.fsum((cross_w * pop.beta[:, others][:, :, None]).ravel().tolist()) / denom
    ge = math.fsum((ge_w * pop.beta[:, :, None]).ravel().tolist()) / denom
    weakly = bool(np.all(main_w >= 0) and np.all(cross_w >= 0) and np.all(ge_w >= 0))
    return EstimandDecomposition(kind, q, main, price, ge, main_w, cross_w, ge_w, denom,
                                 bool(convex), weakly)


def iv_estimand(pop: FinitePopulation, prices: PriceSystem | PriceProcessSpec) -> EstimandDecomposition:
    """Stacked 2SLS estimand with its causal decomposition.

    Main weights are ``kappa_iq A_iq^2 Var(p_qt)`` and cross weights
    ``kappa_is A_is A_iq Cov(p_qt, p_st)``.  When the population carries
    cross-price loadings ``gamma`` the general-equilibrium form is used.

    Raises
    ------
    DegenerateDesignError
        If the summed normalising weights are not positive.
    """
    if pop.gamma is not None:
        return iv_estimand_ge(pop, prices)
    q = pop.focal
    var_q, cov = price_moments(prices, pop.n_periods, q)
    a_q = pop.exposure[:, q]
    main_w = (pop.kappa[:, q] * a_q ** 2)[:, None] * var_q[None, :]
    others = [s for s in range(pop.n_sectors) if s != q]
    cross_w = ((pop.kappa[:, others] * pop.exposure[:, others]) * a_q[:, None])[:, :, None] \
        * cov[others][None, :, :]
    ge_w = np.zeros((pop.n_regions, pop.n_sectors, pop.n_periods))
    return _finish("iv", pop, main_w, cross_w, ge_w, main_w, bool(np.all(main_w >= 0)))


def iv_estimand_ge(pop: FinitePopulation, prices: PriceSystem | PriceProcessSpec) -> EstimandDecomposition:
    """2SLS estimand when outputs respond to other sectors' prices.

    With ``X_ist`` loading ``gamma_iss'`` on ``p_s't``, the focal treatment's
    own loadings shift the normalising weights to
    ``kappa_iq A_iq^2 Var(p_q) + A_iq sum_{s' != q} gamma_iqs' Cov(p_q, p_s')``
    and each non-focal effect gains the weight
    ``A_iq sum_{s' != s} gamma_iss' Cov(p_q, p_s')``.  Under independent
    prices this is ``A_iq gamma_isq Var(p_q)``.
    """
    q = pop.focal
    var_q, cov = price_moments(prices, pop.n_periods, q)
    a_q = pop.exposure[:, q]
    ge_all = _ge_loadings(pop, cov)
    main_w = (pop.kappa[:, q] * a_q ** 2)[:, None] * var_q[None, :] + ge_all[:, q, :]
    others = [s for s in range(pop.n_sectors) if s != q]
    cross_w = ((pop.kappa[:, others] * pop.exposure[:, others]) * a_q[:, None])[:, :, None] \
        * cov[others][None, :, :]
    ge_w = ge_all.copy()
    ge_w[:, q, :] = 0.0
    return _finish("iv_ge", pop, main_w, cross_w, ge_w, main_w, bool(np.all(main_w >= 0)))


def twfe_estimand(pop: FinitePopulation, prices: PriceSystem | PriceProcessSpec) -> EstimandDecomposition:
    """Two-period TWFE estimand ``E[sum dZ dY] / E[sum dZ^2]``.

    The denominator is ``sum_i A_iq^2 Var(dp_q)`` with no first-stage slope,
    so the main term is a convex average only when every ``kappa_iq >= 0``
    and their ``A^2``-weighted mean equals one.  Price draws in the two
    periods are independent, so ``Var(dp) = Var(p_1) + Var(p_2)``.
    """
    if pop.n_periods != 2:
        raise InputError(f"the TWFE estimand is defined for T = 2, got T = {pop.n_periods}")
    q = pop.focal
    _, cov = price_moments(prices, 2, q)
    dcov = cov.sum(axis=1, keepdims=True)
    dvar = dcov[q]
    a_q = pop.exposure[:, q]
    denom_w = (a_q ** 2)[:, None] * dvar[None, :]
    main_w = pop.kappa[:, q][:, None] * denom_w
    others = [s for s in range(pop.n_sectors) if s != q]
    cross_w = ((pop.kappa[:, others] * pop.exposure[:, others]) * a_q[:, None])[:, :, None] \
        * dcov[others][None, :, :]
    ge_w = _ge_loadings(pop, dcov)
    kappa_mean = float(np.sum(pop.kappa[:, q] * a_q ** 2) / np.sum(a_q ** 2)) if np.any(a_q) else 0.0
    convex = bool(np.all(pop.kappa[:, q] >= 0) and abs(kappa_mean - 1.0) <= CONVEX_TOL)
    return _finish("twfe", pop, main_w, cross_w, ge_w, denom_w, convex)


def weight_audit(decomp: EstimandDecomposition, region_labels=None) -> dict:
    """Summarise the sign pattern of all weights.

    ``negative_mass`` is the absolute negative weight divided by the total
    absolute weight across the main, cross and general-equilibrium blocks.
    """
    blocks = [decomp.weights_main.ravel(), decomp.weights_cross.ravel(), decomp.weights_ge.ravel()]
    allw = np.concatenate(blocks)
    total_abs = math.fsum(np.abs(allw).tolist())
    neg = allw[allw < 0]
    neg_abs = math.fsum(np.abs(neg).tolist())
    n = decomp.weights_main.shape[0]
    labels = tuple(region_labels) if region_labels is not None else tuple(str(i) for i in range(n))
    bad_regions = [labels[i] for i in range(n) if np.any(decomp.weights_main[i] < 0)]
    return {
        "min_weight": float(allw.min()) if allw.size else 0.0,
        "n_negative": int(neg.size),
        "negative_mass": neg_abs / total_abs if total_abs > 0 else 0.0,
        "negative_main_regions": bad_regions,
        "n_negative_main_cells": int(np.sum(decomp.weights_main < 0)),
        "convex": bool(decomp.convex),
        "weakly_causal": bool(decomp.weakly_causal),
    }

"""Variance estimators for price-exposure fits.

Every estimator here is a sandwich ``meat / (sum Z~ X~)^2`` for the focal
coefficient.  The variance is reported for the coefficient itself, meaning
the asymptotic variance of ``sqrt(NT)(b - beta)`` divided by ``NT``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dgp import FinitePopulation, PriceProcessSpec
from .errors import DegenerateDesignError, DimensionError, InputError
from .estimators import FitResult, fsum_product
from .panel import Panel, PriceSystem

Z_95 = 1.959963984540054
METHODS = ("price_exposure", "ehw", "cluster_region", "cluster_time")
ALIASES = {"pe": "price_exposure", "robust": "ehw", "hc0": "ehw"}


def canonical_method(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in METHODS:
        raise InputError(f"unknown variance method {name!r}; expected one of {METHODS}")
    return name


@dataclass(frozen=True)
class VarianceReport:
    """Variance of a focal coefficient under one method."""

    method: str
    coefficient: float
    variance: float
    dof_adjustment: str = "none"
    n_clusters: int | None = None

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance)

    @property
    def ci_95(self) -> tuple[float, float]:
        half = Z_95 * self.std_error
        return (self.coefficient - half, self.coefficient + half)

    def to_dict(self) -> dict:
        lo, hi = self.ci_95
        out = {
            "method": self.method,
            "variance": float(self.variance),
            "std_error": float(self.std_error),
            "ci_95": [float(lo), float(hi)],
            "dof_adjustment": self.dof_adjustment,
        }
        if self.n_clusters is not None:
            out["n_clusters"] = int(self.n_clusters)
        return out


def _check_fit(fit: FitResult) -> None:
    if not isinstance(fit, FitResult) or fit.residuals is None:
        raise InputError("variance estimators need a FitResult carrying residuals")


def _bread(fit: FitResult) -> float:
    return fsum_product(fit.instrument, fit.regressor)


def _grouped_meat(scores: np.ndarray, groups: np.ndarray) -> tuple[float, int]:
    """``sum_g (sum_{obs in g} score)^2`` with groups visited in sorted order."""
    flat = scores.ravel()
    g = groups.ravel()
    order = np.argsort(g, kind="stable")
    g_sorted = g[order]
    s_sorted = flat[order]
    cuts = np.flatnonzero(np.diff(g_sorted)) + 1
    totals = [math.fsum(chunk.tolist()) for chunk in np.split(s_sorted, cuts)]
    return math.fsum(v * v for v in totals), len(totals)


def _column_meat(scores: np.ndarray) -> float:
    return math.fsum(math.fsum(scores[:, t].tolist()) ** 2 for t in range(scores.shape[1]))


def pe_variance(fit: FitResult, panel: Panel | None = None, prices: PriceSystem | None = None,
                variant: str = "canonical") -> VarianceReport:
    """Price-exposure randomization variance.

    The meat is ``sum_t p_t^2 (sum_i A_i u_it)^2``, using the untransformed
    exposure (``variant='canonical'``).  ``variant='transformed'`` uses the
    transformed instrument instead.  When the price path is demeaned over the
    sample the two coincide with the time-clustered CR0 variance.

    Parameters
    ----------
    fit : FitResult
    panel, prices : optional
        When given, the canonical weights ``A_i p_t`` are rebuilt from them.
    variant : {'canonical', 'transformed'}
    """
    _check_fit(fit)
    u = fit.residuals
    if variant == "canonical":
        if panel is not None and prices is not None and u.shape == panel.shape \
                and fit.kind not in ("ols",) and fit.coefficients is None:
            w = np.outer(panel.exposure, prices.focal)
        else:
            w = fit.raw_instrument
    elif variant == "transformed":
        w = fit.instrument
    else:
        raise InputError(f"unknown PE variant {variant!r}")
    if w.shape != u.shape:
        raise DimensionError("instrument weights do not match the residual grid")
    meat = _column_meat(w * u)
    return VarianceReport("price_exposure", fit.coefficient, meat / _bread(fit) ** 2,
                          "none" if variant == "canonical" else "transformed instrument")


def ehw_variance(fit: FitResult, panel: Panel | None = None,
                 prices: PriceSystem | None = None) -> VarianceReport:
    """Heteroskedasticity-robust (HC0) sandwich with meat ``sum (Z~ u)^2``."""
    _check_fit(fit)
    scores = fit.instrument * fit.residuals
    meat = math.fsum((scores * scores).ravel().tolist())
    return VarianceReport("ehw", fit.coefficient, meat / _bread(fit) ** 2)


def cluster_variance(fit: FitResult, panel: Panel | None = None, prices: PriceSystem | None = None,
                     by: str = "region", groups=None, cr1: bool = False) -> VarianceReport:
    """Cluster-robust sandwich, CR0 unless ``cr1`` adds ``G / (G - 1)``.

    Parameters
    ----------
    by : {'region', 'time'}
        Clustering dimension.  Region clustering uses ``panel.cluster_id``
        when present, else one cluster per region.
    groups : array_like, optional
        Explicit cluster label per observation (same shape as the
        residuals); overrides ``by``.

    Raises
    ------
    DegenerateDesignError
        If there is only one cluster.
    """
    _check_fit(fit)
    n, t = fit.residuals.shape
    if groups is not None:
        g = np.asarray(groups)
        if g.shape != (n, t):
            raise DimensionError(f"groups must have shape {(n, t)}, got {g.shape}")
        method = "cluster_custom"
    elif by == "region":
        ids = panel.cluster_id if panel is not None and panel.cluster_id is not None else np.arange(n)
        if len(ids) != n:
            raise DimensionError("cluster ids do not match the number of regions")
        g = np.repeat(np.asarray(ids)[:, None], t, axis=1)
        method = "cluster_region"
    elif by == "time":
        g = np.repeat(np.arange(t)[None, :], n, axis=0)
        method = "cluster_time"
    else:
        raise InputError(f"unknown clustering dimension {by!r}")
    meat, n_groups = _grouped_meat(fit.instrument * fit.residuals, g)
    if n_groups < 2:
        raise DegenerateDesignError("cluster-robust variance needs at least two clusters")
    factor = n_groups / (n_groups - 1) if cr1 else 1.0
    return VarianceReport(method, fit.coefficient, factor * meat / _bread(fit) ** 2,
                          "CR1 G/(G-1)" if cr1 else "none", n_groups)


def variance(fit: FitResult, panel: Panel | None, prices: PriceSystem | None, method: str,
             cr1: bool = False) -> VarianceReport:
    """Dispatch to one of :data:`METHODS`."""
    method = canonical_method(method)
    if method == "price_exposure":
        return pe_variance(fit, panel, prices)
    if method == "ehw":
        return ehw_variance(fit, panel, prices)
    return cluster_variance(fit, panel, prices, by=method.split("_")[1], cr1=cr1)


# --------------------------------------------------------------------------- diagnostic


@dataclass(frozen=True)
class HeterogeneityDiagnostic:
    """Decomposition ``V = D1 + D2 - D3`` of the scaled score variance.

    ``D1`` is the expectation the plug-in estimator targets, ``D2`` the
    cross-period covariance and ``D3`` the squared mean score.  Inference is
    conservative when ``D2`` is negligible, since then ``D1 >= V``.
    """

    d1: float
    d2: float
    d3: float
    beta_target: float

    @property
    def variance(self) -> float:
        return self.d1 + self.d2 - self.d3

    @property
    def conservative(self) -> bool:
        return abs(self.d2) <= 1e-12 * max(abs(self.d1), 1.0)

    def to_dict(self) -> dict:
        return {"D1": self.d1, "D2": self.d2, "D3": self.d3, "V": self.variance,
                "beta_target": self.beta_target, "conservative": self.conservative}


def score_loadings(pop: FinitePopulation, beta_target: float) -> tuple[np.ndarray, np.ndarray]:
    """Write ``R_t = sum_i A_iq u_it`` as ``C_t + sum_s G_s p_st``.

    ``u = Y - b X_q`` is the untransformed structural residual at ``b``.
    Returns ``(C, G)`` with ``C`` of length T and ``G`` of length S.
    """
    q = pop.focal
    a_q = pop.exposure[:, q]
    weight = pop.beta.copy()
    weight[:, q] -= beta_target
    # constant part: eta + sum_s (beta_s - b[s=q]) (alpha_s + eps_s)
    c = pop.eta + np.einsum("is,ist->it", weight, pop.alpha[:, :, None] + pop.epsilon)
    d = weight * pop.kappa * pop.exposure
    if pop.gamma is not None:
        d = d + np.einsum("ik,iks->is", weight, pop.gamma)
    return a_q @ c, a_q @ d


def heterogeneity_diagnostic(pop: FinitePopulation, prices: PriceSystem | PriceProcessSpec,
                             beta_target: float | None = None) -> HeterogeneityDiagnostic:
    """Exact ``D1``, ``D2``, ``D3`` for a population and a known price law.

    Prices must be linear in independent symmetric innovations and i.i.d.
    over time, so ``D2 = 0`` and the fourth-moment expansion is exact.

    Parameters
    ----------
    pop : FinitePopulation
    prices : PriceSystem or PriceProcessSpec
        A price system must carry its generating process.
    beta_target : float, optional
        Centre of the residual; defaults to the 2SLS estimand.
    """
    spec = prices.process if isinstance(prices, PriceSystem) else prices
    if not isinstance(spec, PriceProcessSpec):
        raise InputError("the diagnostic needs a known price process")
    if spec.n_sectors != pop.n_sectors:
        raise DimensionError("price process and population disagree on the number of sectors")
    if beta_target is None:
        from .estimands import iv_estimand

        beta_target = iv_estimand(pop, spec).value
    c, g_s = score_loadings(pop, beta_target)
    L = spec.loading_matrix()
    m2, m3, m4 = spec.innovation_moments()
    a = L[pop.focal]
    g = g_s @ L
    nt = pop.n_regions * pop.n_periods
    mean_score = float(np.sum(a * g * m2))
    ep2 = float(np.sum(a * a * m2))
    cross = 0.0
    k = len(a)
    for i in range(k):
        for j in range(k):
            if i != j:
                cross += (a[i] ** 2 * g[j] ** 2 + 2 * a[i] * g[i] * a[j] * g[j]) * m2[i] * m2[j]
    fourth = float(np.sum(a * a * g * g * m4)) + cross
    third = float(np.sum(a * a * g * m3))
    e_sq = c * c * ep2 + 2 * c * third + fourth
    d1 = math.fsum(e_sq.tolist()) / nt
    d3 = pop.n_periods * mean_score ** 2 / nt
    return HeterogeneityDiagnostic(d1, 0.0, d3, float(beta_target))

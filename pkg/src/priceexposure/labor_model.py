"""Multi-sector regional labor model behind the price-exposure first stage.

Regions employ labor in a set of tradable sectors plus one internal
(nontradable) sector.  Log-linearising labor market clearing around a
baseline gives closed forms for the wage feedback, the regional first-stage
slope on ``A * p`` and the monotonicity condition.  Only the log-linear
approximation is implemented; the nonlinear CES equilibrium is not solved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError
from .panel import PriceSystem

SHARE_TOL = 1e-9


def compute_delta(sigma, theta) -> np.ndarray:
    """Reduced-form labor-demand sensitivity ``1 / (1 + (sigma - 1)(1 - theta))``.

    Parameters
    ----------
    sigma : array_like
        CES elasticities, each > 1.
    theta : array_like
        Labor shares in production, each in (0, 1).
    """
    sigma = np.asarray(sigma, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(~(sigma > 1)):
        raise DomainError(f"sigma must exceed 1, got {sigma}")
    if np.any(~((theta > 0) & (theta < 1))):
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    return 1.0 / (1.0 + (sigma - 1.0) * (1.0 - theta))


@dataclass(frozen=True, eq=False)
class LaborModelParams:
    """Structural primitives for ``N`` regions and ``K`` tradable sectors.

    ``shares[i]`` lists baseline employment shares for the ``K`` tradables
    followed by the internal sector and must sum to one.  ``rho[s]`` is the
    loading of sector ``s``'s price on the focal price (``rho[focal] == 1``).
    Capacity inputs (``efficiency``, ``capital``, ``labor``, ``exposure``) are
    N x K; scalars and length-K rows broadcast.
    """

    sigma: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    shares: np.ndarray
    rho: np.ndarray
    efficiency: np.ndarray = 1.0
    capital: np.ndarray = 1.0
    labor: np.ndarray = 1.0
    exposure: np.ndarray = 1.0
    sigma_internal: float = 2.0
    theta_internal: float = 0.5
    region_labels: tuple[str, ...] = ()
    sector_labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        k = sigma.size
        if theta.shape != (k,):
            raise DimensionError("sigma and theta must have one entry per tradable sector")
        rho = np.broadcast_to(np.asarray(self.rho, dtype=float), (k,)).copy()
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        n = phi.size
        shares = np.asarray(self.shares, dtype=float)
        if shares.ndim == 1:
            shares = np.broadcast_to(shares, (n, shares.size)).copy()
        if shares.shape != (n, k + 1):
            raise DimensionError(f"shares must be N x (K+1) = {n} x {k + 1}, got {shares.shape}")
        compute_delta(sigma, theta)
        compute_delta(self.sigma_internal, self.theta_internal)
        if np.any(~(phi > 0)):
            raise DomainError("phi must be positive in every region")
        if np.any(shares < 0) or np.any(np.abs(shares.sum(axis=1) - 1.0) > SHARE_TOL):
            raise DomainError("employment shares must be nonnegative and sum to one in each region")
        cap = {}
        for name in ("efficiency", "capital", "labor", "exposure"):
            try:
                cap[name] = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n, k)).copy()
            except ValueError:
                raise DimensionError(f"{name} must broadcast to N x K = {n} x {k}") from None
        for name, arr in [("sigma", sigma), ("theta", theta), ("rho", rho), ("phi", phi),
                          ("shares", shares), *cap.items()]:
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        rl = tuple(self.region_labels) or tuple(str(i) for i in range(n))
        sl = tuple(self.sector_labels) or tuple(str(s) for s in range(k))
        object.__setattr__(self, "region_labels", rl)
        object.__setattr__(self, "sector_labels", sl)

    @property
    def n_regions(self) -> int:
        return self.phi.size

    @property
    def n_tradables(self) -> int:
        return self.sigma.size

    def all_sigma(self) -> np.ndarray:
        """Elasticities for tradables followed by the internal sector."""
        return np.append(self.sigma, self.sigma_internal)

    def all_delta(self) -> np.ndarray:
        return compute_delta(self.all_sigma(), np.append(self.theta, self.theta_internal))

    def with_phi(self, phi) -> "LaborModelParams":
        return _replace(self, phi=np.broadcast_to(np.asarray(phi, dtype=float), self.phi.shape))


def _replace(params: LaborModelParams, **changes) -> LaborModelParams:
    kw = {f: getattr(params, f) for f in params.__dataclass_fields__}
    kw.update(changes)
    return LaborModelParams(**kw)


@dataclass(frozen=True, eq=False)
class FirstStageProfile:
    """Region-level first-stage objects for one focal sector."""

    focal: int
    delta: np.ndarray
    lambda_: np.ndarray
    wage_elasticity: np.ndarray
    exposure_index: np.ndarray
    threshold: float
    capacity: np.ndarray
    kappa: np.ndarray
    kappa_tilde: np.ndarray
    alpha: np.ndarray
    kappa_E: np.ndarray
    output_elasticity: np.ndarray
    monotone: np.ndarray

    def to_dict(self, params: LaborModelParams | None = None) -> dict:
        regions = params.region_labels if params is not None else tuple(
            str(i) for i in range(self.kappa.size))
        return {
            "focal_sector": (params.sector_labels[self.focal] if params is not None else self.focal),
            "delta": [float(d) for d in self.delta],
            "threshold": float(self.threshold),
            "regions": [
                {
                    "region": regions[i],
                    "lambda": float(self.lambda_[i]),
                    "wage_elasticity": float(self.wage_elasticity[i]),
                    "exposure_index": float(self.exposure_index[i]),
                    "kappa": float(self.kappa[i]),
                    "kappa_tilde": float(self.kappa_tilde[i]),
                    "alpha": float(self.alpha[i]),
                    "kappa_E": float(self.kappa_E[i]),
                    "output_elasticity": float(self.output_elasticity[i]),
                    "monotone": bool(self.monotone[i]),
                }
                for i in range(self.kappa.size)
            ],
            "n_non_monotone": int(np.sum(~self.monotone)),
        }


def compute_lambda(params: LaborModelParams) -> np.ndarray:
    """Wage-feedback denominator ``phi_i + sum_s l_is sigma_s delta_s`` over all sectors."""
    return params.phi + params.shares @ (params.all_sigma() * params.all_delta())


def _check_focal(params: LaborModelParams, focal: int) -> None:
    if not 0 <= focal < params.n_tradables:
        raise DimensionError(f"focal sector {focal} out of range for {params.n_tradables} tradables")
    if params.rho[focal] != 1.0:
        raise DomainError("the focal sector's own co-movement loading must equal 1")


def compute_wage_elasticity(params: LaborModelParams, focal: int = 0) -> np.ndarray:
    """Elasticity of the regional wage to the focal price, per region."""
    _check_focal(params, focal)
    delta = compute_delta(params.sigma, params.theta)
    pull = params.shares[:, :-1] @ ((params.sigma - 1.0) * delta * params.rho)
    return pull / compute_lambda(params)


def compute_kappa(params: LaborModelParams, focal: int = 0) -> FirstStageProfile:
    """Heterogeneous first-stage slopes and monotonicity flags for ``focal``."""
    _check_focal(params, focal)
    lam = compute_lambda(params)
    delta = compute_delta(params.sigma, params.theta)
    s_index = compute_wage_elasticity(params, focal)
    sig, th, dq = params.sigma[focal], params.theta[focal], delta[focal]

    eff = params.efficiency[:, focal]
    cap_k = params.capital[:, focal]
    lab = params.labor[:, focal]
    expo = params.exposure[:, focal]
    for name, arr in (("efficiency", eff), ("capital", cap_k), ("labor", lab)):
        if np.any(~(arr > 0)):
            raise DomainError(f"capacity input {name!r} must be positive for the focal sector")

    capacity = eff * cap_k ** (1.0 - th) * lab ** th
    elasticity = (sig - 1.0) * th * dq * (1.0 - sig / (sig - 1.0) * s_index)
    kappa = capacity * elasticity
    alpha = expo * capacity
    own_share = params.shares[:, focal]
    kappa_e = alpha * (1.0 + (sig - 1.0) * th * dq * (1.0 - sig * dq * own_share / lam))
    threshold = (sig - 1.0) / sig
    return FirstStageProfile(
        focal=focal,
        delta=delta,
        lambda_=lam,
        wage_elasticity=s_index,
        exposure_index=s_index,
        threshold=threshold,
        capacity=capacity,
        kappa=kappa,
        kappa_tilde=expo * kappa,
        alpha=alpha,
        kappa_E=kappa_e,
        output_elasticity=elasticity,
        monotone=s_index < threshold,
    )


def threshold_phi(params: LaborModelParams, focal: int = 0) -> np.ndarray:
    """Labor-supply elasticity at which each region's first stage changes sign.

    Below the returned value the wage drag dominates and the slope is
    negative.  Entries are ``nan`` where no positive crossing exists.
    """
    _check_focal(params, focal)
    delta = params.all_delta()
    sig_all = params.all_sigma()
    sig = params.sigma[focal]
    rho = np.append(params.rho, 0.0)
    # per-sector contribution to pull * sig/(sig-1) - rest; the focal term cancels exactly
    coeff = delta * ((sig_all - 1.0) * rho * sig / (sig - 1.0) - sig_all)
    coeff[focal] = 0.0
    phi_star = params.shares @ coeff
    return np.where(phi_star > 0, phi_star, np.nan)


def sweep_phi(params: LaborModelParams, phis, focal: int = 0, region: int = 0) -> list[dict]:
    """Evaluate one region's exposure index and slope over a grid of ``phi`` values."""
    out = []
    for phi in np.asarray(phis, dtype=float):
        new_phi = params.phi.copy()
        new_phi[region] = phi
        prof = compute_kappa(params.with_phi(new_phi), focal)
        out.append({
            "phi": float(phi),
            "exposure_index": float(prof.exposure_index[region]),
            "kappa": float(prof.kappa[region]),
            "monotone": bool(prof.monotone[region]),
        })
    return out


def simulate_structural_first_stage(params: LaborModelParams, prices: PriceSystem,
                                    efficiency_shocks=None, rng_seed: int | None = 0,
                                    noise_sd: float = 0.0, focal: int | None = None) -> np.ndarray:
    """Simulate focal-sector output from the log-linear first stage.

    ``X[i, t] = alpha_i + A_i kappa_i p_t + kappa_E_i e[i, t] + eps[i, t]`` with
    ``eps ~ Normal(0, noise_sd**2)`` drawn from one stream per region, so that
    the draw for region ``i`` does not depend on how many regions there are.
    """
    q = prices.focal_sector if focal is None else focal
    prof = compute_kappa(params, q)
    n, t = params.n_regions, prices.n_periods
    e = np.zeros((n, t)) if efficiency_shocks is None else np.asarray(efficiency_shocks, dtype=float)
    if e.shape != (n, t):
        raise DimensionError(f"efficiency shocks must be {n} x {t}, got {e.shape}")
    expo = params.exposure[:, q]
    x = (prof.alpha[:, None] + (expo * prof.kappa)[:, None] * prices.focal[None, :]
         + prof.kappa_E[:, None] * e)
    if noise_sd > 0:
        noise = np.vstack([np.random.default_rng([rng_seed, i]).normal(0.0, noise_sd, t) for i in range(n)])
        x = x + noise
    return x

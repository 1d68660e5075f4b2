"""Finite-population data generator for price-exposure designs.

A population ``F_0`` (untreated outcomes, causal effects, first-stage slopes,
exposures and output shocks) is drawn once and frozen.  Price paths are then
redrawn independently, and :func:`generate_panel` maps a population and a
price draw to an observed panel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DomainError
from .panel import Panel, PriceSystem

PRICE_FAMILIES = ("uniform", "normal")
DEPENDENCE = ("independent", "focal_loading")


def as_generator(seed) -> np.random.Generator:
    """Return ``seed`` if it is a Generator, else ``default_rng(seed)``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class PriceProcessSpec:
    """Joint law of sector log prices, i.i.d. over time.

    Each sector ``s`` has a mean-zero innovation ``xi_s`` (``uniform`` on
    ``[-scale, scale]`` or ``normal`` with sd ``scale``).  Under
    ``independent`` dependence ``p_s = xi_s``; under ``focal_loading``
    ``p_focal = xi_focal`` and ``p_s = rho[s] * p_focal + xi_s`` otherwise.
    """

    families: tuple[str, ...] = ("uniform", "uniform")
    scales: tuple[float, ...] = (1.0, 1.0)
    dependence: str = "independent"
    rho: tuple[float, ...] = ()
    focal: int = 0
    temporal: str = "iid"
    sector_labels: tuple[str, ...] = ()

    def __post_init__(self):
        fam = tuple(str(f).lower() for f in self.families)
        sc = tuple(float(x) for x in self.scales)
        if len(sc) == 1 and len(fam) > 1:
            sc = sc * len(fam)
        if len(fam) == 1 and len(sc) > 1:
            fam = fam * len(sc)
        if len(fam) != len(sc) or not fam:
            raise DimensionError("families and scales must have one entry per sector")
        for f in fam:
            if f not in PRICE_FAMILIES:
                raise DomainError(f"unknown price family {f!r}; expected one of {PRICE_FAMILIES}")
        if any(not (x > 0 and np.isfinite(x)) for x in sc):
            raise DomainError("price scales must be positive and finite")
        if self.dependence not in DEPENDENCE:
            raise DomainError(f"unknown dependence {self.dependence!r}; expected one of {DEPENDENCE}")
        if self.temporal != "iid":
            raise ConfigError(f"temporal dependence {self.temporal!r} is not supported (only 'iid')")
        s = len(fam)
        if not 0 <= self.focal < s:
            raise DimensionError(f"focal sector {self.focal} out of range for {s} sectors")
        rho = tuple(float(x) for x in self.rho) or (0.0,) * s
        if len(rho) == 1 and s > 1:
            rho = tuple(rho[0] if k != self.focal else 1.0 for k in range(s))
        if len(rho) != s:
            raise DimensionError("rho must have one entry per sector")
        rho = tuple(1.0 if k == self.focal else r for k, r in enumerate(rho))
        labels = tuple(str(x) for x in self.sector_labels) or tuple(str(k) for k in range(s))
        if len(labels) != s:
            raise DimensionError("sector_labels length does not match the number of sectors")
        object.__setattr__(self, "families", fam)
        object.__setattr__(self, "scales", sc)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "sector_labels", labels)

    @property
    def n_sectors(self) -> int:
        return len(self.families)

    def loading_matrix(self) -> np.ndarray:
        """Matrix ``L`` with ``p_t = L @ xi_t``."""
        s = self.n_sectors
        L = np.eye(s)
        if self.dependence == "focal_loading":
            for k in range(s):
                if k != self.focal:
                    L[k, self.focal] = self.rho[k]
        return L

    def innovation_moments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Second, third and fourth moments of each innovation."""
        m2, m4 = [], []
        for f, a in zip(self.families, self.scales):
            if f == "uniform":
                m2.append(a * a / 3.0)
                m4.append(a ** 4 / 5.0)
            else:
                m2.append(a * a)
                m4.append(3.0 * a ** 4)
        return np.array(m2), np.zeros(self.n_sectors), np.array(m4)

    def covariance(self) -> np.ndarray:
        """S x S contemporaneous covariance of the price vector."""
        L = self.loading_matrix()
        return L @ np.diag(self.innovation_moments()[0]) @ L.T

    def variances(self, n_periods: int) -> np.ndarray:
        return np.tile(np.diag(self.covariance())[:, None], (1, n_periods))

    def covariances_with(self, sector: int, n_periods: int) -> np.ndarray:
        """Cov(p_sector,t, p_s,t) for every s, tiled over ``n_periods``."""
        return np.tile(self.covariance()[:, sector][:, None], (1, n_periods))

    def draw_innovations(self, n_periods: int, rng) -> np.ndarray:
        rng = as_generator(rng)
        xi = np.empty((self.n_sectors, n_periods))
        for k, (f, a) in enumerate(zip(self.families, self.scales)):
            xi[k] = rng.uniform(-a, a, n_periods) if f == "uniform" else rng.normal(0.0, a, n_periods)
        return xi

    def draw(self, n_periods: int, rng) -> np.ndarray:
        """One S x T draw of log prices."""
        xi = self.draw_innovations(n_periods, rng)
        if self.dependence == "independent":
            return xi
        return self.loading_matrix() @ xi


def draw_prices(spec: PriceProcessSpec, n_periods: int, rng_seed=None,
                center: bool = False) -> PriceSystem:
    """Draw a :class:`PriceSystem` with its analytic moments recorded.

    With ``center=True`` each sector's path is demeaned over time, mirroring
    what is done to observed log prices.
    """
    if n_periods < 1:
        raise DomainError("the number of periods must be at least 1")
    p = spec.draw(n_periods, rng_seed)
    if center:
        p = p - p.mean(axis=1, keepdims=True)
    return PriceSystem(
        log_prices=p,
        focal_sector=spec.focal,
        variances=spec.variances(n_periods),
        covariances_with_focal=spec.covariances_with(spec.focal, n_periods),
        sector_labels=spec.sector_labels,
        process=spec,
    )


@dataclass(frozen=True)
class PopulationConfig:
    """Laws used to draw a finite population.

    Defaults: ``beta ~ U(0, 2)``, ``kappa ~ U(0, 1)``, ``A ~ U(0.5, 1.5)``,
    ``alpha = 2 A``, ``eta ~ N(0, 1)``, ``eps ~ N(0, 0.5^2)``, no GE loadings.
    ``exposure_common`` in [0, 1] mixes the focal exposure into the other
    sectors' exposures, ``A_s = w A_focal + (1 - w) A_s``.
    """

    n_regions: int
    n_periods: int
    n_sectors: int = 2
    focal: int = 0
    beta_low: float = 0.0
    beta_high: float = 2.0
    kappa_low: float = 0.0
    kappa_high: float = 1.0
    exposure_low: float = 0.5
    exposure_high: float = 1.5
    exposure_common: float = 0.0
    alpha_scale: float = 2.0
    eta_sd: float = 1.0
    epsilon_sd: float = 0.5
    gamma_sd: float = 0.0

    def __post_init__(self):
        for name in ("n_regions", "n_periods", "n_sectors"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be at least 1")
        if not 0 <= self.focal < self.n_sectors:
            raise DimensionError(f"focal sector {self.focal} out of range")
        for lo, hi in (("beta_low", "beta_high"), ("kappa_low", "kappa_high"),
                       ("exposure_low", "exposure_high")):
            if not getattr(self, lo) <= getattr(self, hi):
                raise DomainError(f"{lo} must not exceed {hi}")
        if self.exposure_low <= 0:
            raise DomainError("exposure_low must be positive")
        if not 0.0 <= self.exposure_common <= 1.0:
            raise DomainError("exposure_common must lie in [0, 1]")
        for name in ("eta_sd", "epsilon_sd", "gamma_sd"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")


@dataclass(frozen=True, eq=False)
class FinitePopulation:
    """Frozen conditioning set ``F_0``.

    Shapes: ``eta`` N x T; ``beta``, ``alpha``, ``kappa``, ``exposure`` N x S;
    ``epsilon`` N x S x T; ``gamma`` N x S x S with zero diagonal, or None.
    """

    eta: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    kappa: np.ndarray
    exposure: np.ndarray
    epsilon: np.ndarray
    gamma: np.ndarray | None = None
    focal: int = 0
    monotone_design: bool = False
    region_labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        if eta.ndim != 2:
            raise DimensionError("eta must be N x T")
        n, t = eta.shape
        mats = {}
        for name in ("beta", "alpha", "kappa", "exposure"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim == 1:
                m = m[:, None]
            if m.ndim != 2 or m.shape[0] != n:
                raise DimensionError(f"{name} must be N x S with N={n}, got {m.shape}")
            mats[name] = m
        s = mats["beta"].shape[1]
        for name, m in mats.items():
            if m.shape != (n, s):
                raise DimensionError(f"{name} must be {n} x {s}, got {m.shape}")
        eps = np.asarray(self.epsilon, dtype=float)
        if eps.ndim == 2 and s == 1:
            eps = eps[:, None, :]
        if eps.shape != (n, s, t):
            raise DimensionError(f"epsilon must be {n} x {s} x {t}, got {eps.shape}")
        gamma = self.gamma
        if gamma is not None:
            gamma = np.asarray(gamma, dtype=float)
            if gamma.shape != (n, s, s):
                raise DimensionError(f"gamma must be {n} x {s} x {s}, got {gamma.shape}")
            if np.any(np.einsum("iss->is", gamma) != 0):
                raise DomainError("gamma must have a zero own-sector diagonal")
        if not 0 <= self.focal < s:
            raise DimensionError(f"focal sector {self.focal} out of range for S={s}")
        if self.monotone_design and np.any(mats["kappa"][:, self.focal] < 0):
            raise DomainError("monotone design requires nonnegative focal first-stage slopes")
        all_arrays = [("eta", eta), ("epsilon", eps), *mats.items()]
        if gamma is not None:
            all_arrays.append(("gamma", gamma))
        for name, arr in all_arrays:
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite values")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        labels = tuple(str(x) for x in self.region_labels) or tuple(str(i) for i in range(n))
        object.__setattr__(self, "region_labels", labels)

    @property
    def n_regions(self) -> int:
        return self.eta.shape[0]

    @property
    def n_periods(self) -> int:
        return self.eta.shape[1]

    @property
    def n_sectors(self) -> int:
        return self.beta.shape[1]

    def with_focal(self, focal: int) -> "FinitePopulation":
        return FinitePopulation(self.eta, self.beta, self.alpha, self.kappa, self.exposure,
                                self.epsilon, self.gamma, focal,
                                self.monotone_design and bool(np.all(self.kappa[:, focal] >= 0)),
                                self.region_labels)


def draw_population(config: PopulationConfig, rng_seed=None) -> FinitePopulation:
    """Draw one finite population from ``config``.

    Draw order is fixed (beta, kappa, exposure, eta, epsilon, gamma) so that a
    seed always reproduces the same population.
    """
    rng = as_generator(rng_seed)
    n, t, s = int(config.n_regions), int(config.n_periods), int(config.n_sectors)
    beta = rng.uniform(config.beta_low, config.beta_high, (n, s))
    kappa = rng.uniform(config.kappa_low, config.kappa_high, (n, s))
    exposure = rng.uniform(config.exposure_low, config.exposure_high, (n, s))
    if config.exposure_common > 0 and s > 1:
        w = config.exposure_common
        others = [k for k in range(s) if k != config.focal]
        exposure[:, others] = w * exposure[:, [config.focal]] + (1.0 - w) * exposure[:, others]
    alpha = config.alpha_scale * exposure
    eta = rng.normal(0.0, config.eta_sd, (n, t))
    eps = rng.normal(0.0, config.epsilon_sd, (n, s, t))
    gamma = None
    if config.gamma_sd > 0 and s > 1:
        gamma = rng.normal(0.0, config.gamma_sd, (n, s, s))
        gamma[:, np.arange(s), np.arange(s)] = 0.0
    return FinitePopulation(eta, beta, alpha, kappa, exposure, eps, gamma, config.focal,
                            monotone_design=bool(np.all(kappa[:, config.focal] >= 0)))


def sector_outputs(pop: FinitePopulation, prices: PriceSystem | np.ndarray) -> np.ndarray:
    """N x S x T outputs ``alpha + kappa A p + eps (+ sum gamma p)``."""
    p = prices.log_prices if isinstance(prices, PriceSystem) else np.asarray(prices, dtype=float)
    if p.shape != (pop.n_sectors, pop.n_periods):
        raise DimensionError(
            f"prices must be {pop.n_sectors} x {pop.n_periods}, got {p.shape}")
    x = (pop.alpha[:, :, None] + (pop.kappa * pop.exposure)[:, :, None] * p[None, :, :]
         + pop.epsilon)
    if pop.gamma is not None:
        x = x + np.einsum("isk,kt->ist", pop.gamma, p)
    return x


def generate_panel(pop: FinitePopulation, prices: PriceSystem | np.ndarray,
                   focal: int | None = None, period_labels: Sequence[str] = ()) -> Panel:
    """Observed panel ``Y = eta + sum_s beta_s X_s`` with focal treatment ``X_q``."""
    q = pop.focal if focal is None else int(focal)
    x = sector_outputs(pop, prices)
    y = pop.eta + np.einsum("is,ist->it", pop.beta, x)
    return Panel(
        outcome=y,
        exposure=pop.exposure[:, q],
        treatment=x[:, q, :],
        region_labels=pop.region_labels,
        period_labels=tuple(period_labels),
        sector_outputs=x,
    )


def population_from_labor_model(params, config: PopulationConfig, rng_seed=None,
                                focal: int = 0) -> FinitePopulation:
    """Draw a population whose focal-sector slopes come from the labor model.

    The focal columns of ``kappa``, ``alpha`` and ``exposure`` are replaced by
    the structural values; all other primitives follow ``config``.
    """
    from .labor_model import compute_kappa

    if params.n_regions != config.n_regions:
        raise DimensionError("labor-model regions and population size differ")
    prof = compute_kappa(params, focal)
    base = draw_population(config, rng_seed)
    q = base.focal
    kappa = base.kappa.copy()
    alpha = base.alpha.copy()
    exposure = base.exposure.copy()
    kappa[:, q] = prof.kappa
    alpha[:, q] = prof.alpha
    exposure[:, q] = params.exposure[:, focal]
    return FinitePopulation(base.eta, base.beta, alpha, kappa, exposure, base.epsilon, base.gamma,
                            q, bool(np.all(prof.kappa >= 0)), params.region_labels)

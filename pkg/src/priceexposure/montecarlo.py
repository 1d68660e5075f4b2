"""Monte Carlo coverage studies.

A scenario draws one finite population, then redraws prices ``R`` times
while holding the population fixed.  Replication ``r`` uses the RNG stream
``(master_seed, r)`` and aggregates use exactly rounded sums, so reports do
not depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .dgp import FinitePopulation, PopulationConfig, PriceProcessSpec, draw_population, draw_prices, generate_panel
from .errors import DegeneracyError, InputError, MonteCarloError
from .estimands import iv_estimand
from .estimators import EstimatorSpec, fit_2sls
from .inference import Z_95, canonical_method, variance

WORKERS_ENV = "PRICEEXPOSURE_WORKERS"
MAX_EXCLUSION_RATE = 0.001
DISPLAY_NAMES = {"price_exposure": "P-E", "ehw": "Robust", "cluster_region": "Cl-Region",
                 "cluster_time": "Cl-Time"}


def default_workers() -> int:
    """Worker count from ``PRICEEXPOSURE_WORKERS``, else 1."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


@dataclass(frozen=True)
class Scenario:
    """One Monte Carlo design.

    ``population`` fixes N, T and S; the population is drawn from stream
    ``population_seed`` (default ``master_seed``) and price draws from
    ``(master_seed, r)``.  Prices are demeaned over time within each draw.
    """

    population: PopulationConfig
    prices: PriceProcessSpec
    replications: int = 1000
    fixed_effects: str = "region"
    methods: tuple[str, ...] = ("price_exposure", "ehw")
    master_seed: int = 0
    population_seed: int | None = None
    center_prices: bool = True
    name: str = ""

    def __post_init__(self):
        if int(self.replications) < 1:
            raise InputError("replications must be at least 1")
        if self.prices.n_sectors != self.population.n_sectors:
            raise InputError("price process and population disagree on the number of sectors")
        if self.prices.focal != self.population.focal:
            raise InputError("price process and population disagree on the focal sector")
        methods = tuple(canonical_method(m) for m in self.methods)
        if not methods:
            raise InputError("at least one variance method is required")
        object.__setattr__(self, "methods", methods)
        EstimatorSpec("two_sls", self.fixed_effects)
        if not self.name:
            object.__setattr__(self, "name", f"N={self.n_regions}, T={self.n_periods}")

    @property
    def n_regions(self) -> int:
        return int(self.population.n_regions)

    @property
    def n_periods(self) -> int:
        return int(self.population.n_periods)

    @property
    def n_sectors(self) -> int:
        return int(self.population.n_sectors)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, master_seed=int(seed), population_seed=None)

    def to_dict(self) -> dict:
        pc = self.population
        return {
            "name": self.name,
            "N": self.n_regions,
            "T": self.n_periods,
            "S": self.n_sectors,
            "replications": int(self.replications),
            "fixed_effects": self.fixed_effects,
            "methods": list(self.methods),
            "master_seed": int(self.master_seed),
            "population_seed": int(self.population_seed if self.population_seed is not None
                                   else self.master_seed),
            "population": {k: getattr(pc, k) for k in pc.__dataclass_fields__},
            "prices": {
                "families": list(self.prices.families),
                "scales": list(self.prices.scales),
                "dependence": self.prices.dependence,
                "rho": list(self.prices.rho),
            },
        }


@dataclass(frozen=True)
class MCReport:
    """Aggregates of one scenario.

    Coverage and bias are reported against the finite-population estimand
    and, as a secondary column, against 1.
    """

    scenario: Scenario
    estimand: float
    n_used: int
    n_excluded: int
    degenerate: bool
    mean_bias: float
    mean_bias_unit: float
    mean_se: dict
    coverage: dict
    coverage_unit: dict
    wall_time: float = field(default=0.0, compare=False)

    def mc_standard_error(self, method: str, unit: bool = False) -> float:
        c = (self.coverage_unit if unit else self.coverage)[method]
        if self.n_used == 0 or c is None or math.isnan(c):
            return float("nan")
        return math.sqrt(c * (1.0 - c) / self.n_used)

    def to_dict(self, include_timing: bool = False) -> dict:
        def clean(x):
            return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)

        out = {
            "scenario": self.scenario.to_dict(),
            "estimand": clean(self.estimand),
            "replications_used": self.n_used,
            "replications_excluded": self.n_excluded,
            "degenerate": self.degenerate,
            "mean_bias": clean(self.mean_bias),
            "mean_bias_vs_unit": clean(self.mean_bias_unit),
            "methods": {
                m: {
                    "mean_se": clean(self.mean_se[m]),
                    "coverage_95": clean(self.coverage[m]),
                    "coverage_95_vs_unit": clean(self.coverage_unit[m]),
                    "mc_se_coverage": clean(self.mc_standard_error(m)),
                    "mc_se_coverage_vs_unit": clean(self.mc_standard_error(m, unit=True)),
                }
                for m in self.scenario.methods
            },
        }
        if self.degenerate:
            out["note"] = "every replication was degenerate (the transformed instrument vanishes)"
        if include_timing:
            out["wall_time_seconds"] = self.wall_time
        return out


@lru_cache(maxsize=8)
def _population(config: PopulationConfig, seed: int) -> FinitePopulation:
    return draw_population(config, seed)


def scenario_population(sc: Scenario) -> FinitePopulation:
    seed = sc.master_seed if sc.population_seed is None else sc.population_seed
    return _population(sc.population, int(seed))


def _run_block(sc: Scenario, start: int, stop: int) -> list[tuple]:
    """Replications ``start..stop-1``: ``(r, ok, coefficient, se per method)``."""
    pop = scenario_population(sc)
    spec = EstimatorSpec("two_sls", sc.fixed_effects)
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for r in range(start, stop):
            rng = np.random.default_rng([sc.master_seed, r])
            prices = draw_prices(sc.prices, sc.n_periods, rng, center=sc.center_prices)
            panel = generate_panel(pop, prices)
            try:
                fit = fit_2sls(panel, prices, spec)
                ses = tuple(variance(fit, panel, prices, m).std_error for m in sc.methods)
            except DegeneracyError:
                out.append((r, False, float("nan"), ()))
                continue
            out.append((r, True, fit.coefficient, ses))
    return out


def _blocks(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n))
    edges = [n * k // parts for k in range(parts + 1)]
    return [(edges[k], edges[k + 1]) for k in range(parts)]


def run_replications(sc: Scenario, workers: int | None = None) -> list[tuple]:
    """Per-replication results ordered by ``r``."""
    workers = default_workers() if workers is None else max(1, int(workers))
    blocks = _blocks(int(sc.replications), workers * 4 if workers > 1 else 1)
    if workers == 1:
        rows = [row for a, b in blocks for row in _run_block(sc, a, b)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(_run_block, sc, a, b) for a, b in blocks]
            rows = [row for f in futures for row in f.result()]
    rows.sort(key=lambda row: row[0])
    return rows


def run_scenario(sc: Scenario, workers: int | None = None, rows_out: list | None = None) -> MCReport:
    """Run one scenario.

    Raises
    ------
    MonteCarloError
        If at least 0.1% of replications are degenerate but not all of them.
        A scenario where every replication is degenerate is returned with
        ``degenerate=True``.
    """
    t0 = time.perf_counter()
    pop = scenario_population(sc)
    try:
        estimand = iv_estimand(pop, sc.prices).total
    except DegeneracyError:
        estimand = float("nan")
    rows = run_replications(sc, workers)
    if rows_out is not None:
        rows_out.extend(rows)
    good = [row for row in rows if row[1]]
    n_used, n_excl = len(good), len(rows) - len(good)
    methods = sc.methods
    if n_used == 0:
        nan = float("nan")
        return MCReport(sc, estimand, 0, n_excl, True, nan, nan,
                        {m: nan for m in methods}, {m: nan for m in methods},
                        {m: nan for m in methods}, time.perf_counter() - t0)
    if n_excl / len(rows) >= MAX_EXCLUSION_RATE:
        raise MonteCarloError(
            f"{sc.name}: {n_excl} of {len(rows)} replications were degenerate "
            f"(limit {MAX_EXCLUSION_RATE:.1%})")
    b = [row[2] for row in good]
    mean_bias = math.fsum(x - estimand for x in b) / n_used
    mean_bias_unit = math.fsum(x - 1.0 for x in b) / n_used
    mean_se, cov, cov_unit = {}, {}, {}
    for k, m in enumerate(methods):
        ses = [row[3][k] for row in good]
        mean_se[m] = math.fsum(ses) / n_used
        cov[m] = sum(abs(x - estimand) <= Z_95 * s for x, s in zip(b, ses)) / n_used
        cov_unit[m] = sum(abs(x - 1.0) <= Z_95 * s for x, s in zip(b, ses)) / n_used
    return MCReport(sc, estimand, n_used, n_excl, False, mean_bias, mean_bias_unit,
                    mean_se, cov, cov_unit, time.perf_counter() - t0)


def write_replications_csv(path, blocks: Sequence[tuple[Scenario, Sequence[tuple]]]) -> None:
    """Per-replication coefficients and standard errors for several scenarios."""
    width = max(len(sc.methods) for sc, _ in blocks)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "replication", "ok", "coefficient",
                    *[f"se_{k}" for k in range(width)], "methods"])
        for sc, rows in blocks:
            for r, ok, coef, ses in rows:
                se_cells = [repr(float(s)) for s in ses] if ok else []
                se_cells += [""] * (width - len(se_cells))
                w.writerow([sc.name, r, int(ok), repr(float(coef)) if ok else "", *se_cells,
                            "|".join(sc.methods)])


def run_table(rows: Sequence[Scenario], workers: int | None = None) -> list[MCReport]:
    """Run scenarios in order."""
    if not rows:
        raise InputError("run_table needs at least one scenario")
    return [run_scenario(sc, workers) for sc in rows]


def format_table(reports: Sequence[MCReport], title: str = "") -> str:
    """Aligned text table with bias, mean SE and coverage columns."""
    if not reports:
        raise InputError("nothing to format")
    methods = reports[0].scenario.methods
    head = ["Scenario", "Mean bias"]
    head += [f"SE {DISPLAY_NAMES.get(m, m)}" for m in methods]
    head += [f"Cov {DISPLAY_NAMES.get(m, m)}" for m in methods]
    head += ["Excl."]

    def fmt(x):
        return "   -" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.3f}"

    body = []
    for rep in reports:
        cells = [rep.scenario.name + (" (degenerate)" if rep.degenerate else ""), fmt(rep.mean_bias)]
        cells += [fmt(rep.mean_se[m]) for m in methods]
        cells += [fmt(rep.coverage[m]) for m in methods]
        cells += [str(rep.n_excluded)]
        body.append(cells)
    widths = [max(len(r[k]) for r in [head, *body]) for k in range(len(head))]
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(w) if k == 0 else h.rjust(w) for k, (h, w) in enumerate(zip(head, widths))))
    lines.append("  ".join("-" * w for w in widths))
    for cells in body:
        lines.append("  ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(cells, widths))))
    return "\n".join(lines)


def reports_json(reports: Sequence[MCReport], include_timing: bool = False) -> str:
    """Deterministic JSON for a list of reports."""
    return json.dumps({"rows": [r.to_dict(include_timing) for r in reports]}, indent=2, sort_keys=True)

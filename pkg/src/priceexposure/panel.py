"""Region-by-period panels, sector price systems and fixed-effect transforms.

All matrices are stored region-major: row ``i`` is a region, column ``t`` a
period.  Containers are frozen dataclasses whose arrays are made read-only on
construction, so they can be shared freely between threads and processes.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import DimensionError, DomainError, InputError, InsufficientPeriodsError, ParseError

FIXED_EFFECTS = ("none", "region", "time", "two_way")


def _frozen(a: Any, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Panel:
    """Balanced N x T panel of outcomes, treatment and a focal exposure.

    Parameters
    ----------
    outcome : array, shape (N, T)
    exposure : array, shape (N,)
        Time-invariant exposure of each region to the focal sector.
    treatment : array, shape (N, T), optional
        Focal-sector activity (output units).
    cluster_id : int array, shape (N,), optional
    region_labels, period_labels : sequence of str, optional
    sector_outputs : array, shape (N, S, T), optional
        Full output tensor, only populated by the synthetic generator.
    """

    outcome: np.ndarray
    exposure: np.ndarray
    treatment: np.ndarray | None = None
    cluster_id: np.ndarray | None = None
    region_labels: tuple[str, ...] = ()
    period_labels: tuple[str, ...] = ()
    sector_outputs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        y = _frozen(self.outcome)
        if y.ndim != 2 or y.shape[0] < 1 or y.shape[1] < 1:
            raise DimensionError(f"outcome must be a non-empty N x T matrix, got shape {y.shape}")
        n, t = y.shape
        a = _frozen(self.exposure)
        if a.shape != (n,):
            raise DimensionError(f"exposure must have length N={n}, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InputError("exposure has missing or non-finite entries")
        if not np.all(np.isfinite(y)):
            raise InputError("outcome has missing or non-finite entries")
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "exposure", a)
        if self.treatment is not None:
            x = _frozen(self.treatment)
            if x.shape != (n, t):
                raise DimensionError(f"treatment must be {n} x {t}, got shape {x.shape}")
            if not np.all(np.isfinite(x)):
                raise InputError("treatment has missing or non-finite entries")
            object.__setattr__(self, "treatment", x)
        if self.cluster_id is not None:
            c = _frozen(self.cluster_id, dtype=np.int64)
            if c.shape != (n,):
                raise DimensionError(f"cluster_id must have length N={n}, got shape {c.shape}")
            object.__setattr__(self, "cluster_id", c)
        if self.sector_outputs is not None:
            object.__setattr__(self, "sector_outputs", _frozen(self.sector_outputs))
        rl = tuple(str(r) for r in self.region_labels) or tuple(str(i) for i in range(n))
        pl = tuple(str(p) for p in self.period_labels) or tuple(str(s) for s in range(t))
        if len(rl) != n or len(pl) != t:
            raise DimensionError("label vectors do not match the panel shape")
        object.__setattr__(self, "region_labels", rl)
        object.__setattr__(self, "period_labels", pl)
        if np.any(a < 0):
            warnings.warn(
                "negative exposures found; the monotonicity reading of the first stage "
                "assumes positive exposure",
                stacklevel=3,
            )

    @property
    def n_regions(self) -> int:
        return self.outcome.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcome.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.outcome.shape


@dataclass(frozen=True, eq=False)
class PriceSystem:
    """Sector price paths with their conditional moments.

    ``log_prices[s, t]`` is the centred log price of sector ``s``.  When the
    paths come from a known stochastic process, ``variances`` and
    ``covariances_with_focal`` hold Var(p_st) and Cov(p_qt, p_st) and
    ``process`` the generating :class:`~priceexposure.dgp.PriceProcessSpec`.
    """

    log_prices: np.ndarray
    focal_sector: int = 0
    variances: np.ndarray | None = None
    covariances_with_focal: np.ndarray | None = None
    sector_labels: tuple[str, ...] = ()
    process: Any = field(default=None, repr=False)

    def __post_init__(self):
        p = _frozen(self.log_prices)
        if p.ndim == 1:
            p = _frozen(p[None, :])
        if p.ndim != 2:
            raise DimensionError(f"log_prices must be S x T, got shape {p.shape}")
        s, t = p.shape
        if not 0 <= self.focal_sector < s:
            raise DimensionError(f"focal_sector {self.focal_sector} out of range for S={s}")
        object.__setattr__(self, "log_prices", p)
        if self.variances is not None:
            v = _frozen(self.variances)
            if v.shape != (s, t):
                raise DimensionError(f"variances must be {s} x {t}, got {v.shape}")
            if np.any(v < 0):
                raise DomainError("price variances must be nonnegative")
            object.__setattr__(self, "variances", v)
        if self.covariances_with_focal is not None:
            c = _frozen(self.covariances_with_focal)
            if c.shape != (s, t):
                raise DimensionError(f"covariances_with_focal must be {s} x {t}, got {c.shape}")
            if self.variances is not None and not np.allclose(
                c[self.focal_sector], self.variances[self.focal_sector], rtol=1e-12, atol=0
            ):
                raise DomainError("covariance of the focal price with itself must equal its variance")
            object.__setattr__(self, "covariances_with_focal", c)
        labels = tuple(str(x) for x in self.sector_labels) or tuple(str(i) for i in range(s))
        if len(labels) != s:
            raise DimensionError("sector_labels length does not match S")
        object.__setattr__(self, "sector_labels", labels)

    @property
    def n_sectors(self) -> int:
        return self.log_prices.shape[0]

    @property
    def n_periods(self) -> int:
        return self.log_prices.shape[1]

    @property
    def focal(self) -> np.ndarray:
        """Focal-sector price path, shape (T,)."""
        return self.log_prices[self.focal_sector]

    def has_moments(self) -> bool:
        return self.variances is not None and self.covariances_with_focal is not None

    def with_focal(self, sector: int | str) -> "PriceSystem":
        """Same system with a different focal sector (index or label)."""
        idx = self.sector_labels.index(sector) if isinstance(sector, str) else int(sector)
        cov = None
        if self.covariances_with_focal is not None and idx != self.focal_sector:
            # only derivable when the process is known
            if self.process is None:
                raise InputError("cannot re-target covariances without a price process")
            cov = self.process.covariances_with(idx, self.n_periods)
        elif self.covariances_with_focal is not None:
            cov = self.covariances_with_focal
        return PriceSystem(
            self.log_prices, idx, self.variances, cov, self.sector_labels, self.process
        )


@dataclass(frozen=True, eq=False)
class InstrumentMatrix:
    """Price-exposure instrument ``Z[i, t] = A[i] * p[q, t]``."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))


def center_log_prices(raw_prices, sector_labels: Sequence[str] | None = None,
                      period_labels: Sequence[str] | None = None) -> np.ndarray:
    """Log-transform each sector's price series and demean it over time.

    Parameters
    ----------
    raw_prices : array, shape (S, T) or (T,)
        Strictly positive price levels.

    Returns
    -------
    ndarray, shape (S, T)
    """
    p = np.asarray(raw_prices, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    bad = np.argwhere(~(p > 0))
    if bad.size:
        s, t = bad[0]
        sl = sector_labels[s] if sector_labels is not None else s
        tl = period_labels[t] if period_labels is not None else t
        raise DomainError(f"nonpositive price {p[s, t]!r} for sector {sl} in period {tl}")
    logp = np.log(p)
    return logp - logp.mean(axis=1, keepdims=True)


def build_instrument(panel: Panel, prices: PriceSystem, exposure=None) -> InstrumentMatrix:
    """Outer product of the focal exposure with the focal price path."""
    a = panel.exposure if exposure is None else np.asarray(exposure, dtype=float)
    if prices.n_periods != panel.n_periods:
        raise DimensionError(
            f"price system has T={prices.n_periods} periods, panel has T={panel.n_periods}"
        )
    if a.shape != (panel.n_regions,):
        raise DimensionError(f"exposure must have length {panel.n_regions}")
    return InstrumentMatrix(np.multiply.outer(a, prices.focal))


def within_transform(matrix) -> np.ndarray:
    """Two-way demeaning: subtract row and column means, add back the grand mean."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or 0 in m.shape:
        raise DimensionError(f"expected a non-empty N x T matrix, got shape {m.shape}")
    return m - m.mean(axis=1, keepdims=True) - m.mean(axis=0, keepdims=True) + m.mean()


def demean(matrix, fixed_effects: str = "two_way") -> np.ndarray:
    """Absorb region and/or period intercepts from an N x T matrix."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or 0 in m.shape:
        raise DimensionError(f"expected a non-empty N x T matrix, got shape {m.shape}")
    if fixed_effects == "none":
        return m.copy()
    if fixed_effects == "region":
        return m - m.mean(axis=1, keepdims=True)
    if fixed_effects == "time":
        return m - m.mean(axis=0, keepdims=True)
    if fixed_effects == "two_way":
        return within_transform(m)
    raise InputError(f"unknown fixed_effects {fixed_effects!r}; expected one of {FIXED_EFFECTS}")


def first_difference(matrix) -> np.ndarray:
    """Column ``t`` of the result is column ``t+1`` minus column ``t``."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise DimensionError(f"expected an N x T matrix, got shape {m.shape}")
    if m.shape[1] < 2:
        raise InsufficientPeriodsError("first differences need at least two periods")
    return np.diff(m, axis=1)


# --------------------------------------------------------------------------- CSV

def _period_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def _parse_float(text: str, path: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot parse {text!r} as a number", path, line) from None
    if not math.isfinite(value):
        raise ParseError(f"column {column!r}: non-finite value {text!r}", path, line)
    return value


PANEL_COLUMNS = ("region", "period", "outcome", "treatment", "exposure", "cluster")


def read_panel_csv(path: str, extra_exposures: Sequence[str] = ()) -> tuple[Panel, dict[str, np.ndarray]]:
    """Read a long-format panel file.

    The header must contain ``region,period,outcome,exposure`` and may contain
    ``treatment``, ``cluster`` and ``exposure:<sector>`` columns.  Extra
    exposure columns named in ``extra_exposures`` are returned separately.
    Missing cells and unbalanced panels are rejected.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", path, 1) from None
        for req in ("region", "period", "outcome", "exposure"):
            if req not in header:
                raise ParseError(f"missing required column {req!r}", path, 1)
        col = {name: k for k, name in enumerate(header)}
        for sector in extra_exposures:
            if f"exposure:{sector}" not in col:
                raise ParseError(f"missing column 'exposure:{sector}'", path, 1)
        has_x = "treatment" in col
        has_c = "cluster" in col
        rows: dict[tuple[str, str], tuple[int, list[str]]] = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(rec)}", path, lineno)
            rec = [c.strip() for c in rec]
            key = (rec[col["region"]], rec[col["period"]])
            if key in rows:
                raise ParseError(f"duplicate row for region {key[0]!r}, period {key[1]!r}", path, lineno)
            rows[key] = (lineno, rec)
    if not rows:
        raise ParseError("no data rows", path)

    regions = list(dict.fromkeys(k[0] for k in rows))
    periods = sorted({k[1] for k in rows}, key=_period_key)
    n, t = len(regions), len(periods)
    if len(rows) != n * t:
        missing = [(r, p) for r in regions for p in periods if (r, p) not in rows][:3]
        raise InputError(f"{path}: unbalanced panel, missing (region, period) cells e.g. {missing}")
    ridx = {r: i for i, r in enumerate(regions)}
    pidx = {p: j for j, p in enumerate(periods)}
    y = np.empty((n, t))
    x = np.empty((n, t)) if has_x else None
    a = np.full(n, np.nan)
    clusters = np.zeros(n, dtype=np.int64) if has_c else None
    extra = {s: np.full(n, np.nan) for s in extra_exposures}
    cluster_codes: dict[str, int] = {}
    for (r, p), (lineno, rec) in rows.items():
        i, j = ridx[r], pidx[p]
        y[i, j] = _parse_float(rec[col["outcome"]], path, lineno, "outcome")
        if has_x:
            x[i, j] = _parse_float(rec[col["treatment"]], path, lineno, "treatment")
        ai = _parse_float(rec[col["exposure"]], path, lineno, "exposure")
        if not np.isnan(a[i]) and a[i] != ai:
            raise ParseError(f"exposure of region {r!r} varies over time", path, lineno)
        a[i] = ai
        for s in extra_exposures:
            v = _parse_float(rec[col[f"exposure:{s}"]], path, lineno, f"exposure:{s}")
            if not np.isnan(extra[s][i]) and extra[s][i] != v:
                raise ParseError(f"exposure:{s} of region {r!r} varies over time", path, lineno)
            extra[s][i] = v
        if has_c:
            code = cluster_codes.setdefault(rec[col["cluster"]], len(cluster_codes))
            clusters[i] = code
    panel = Panel(y, a, x, clusters, tuple(regions), tuple(periods))
    return panel, extra


def read_prices_csv(path: str, periods: Sequence[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    """Read ``period,sector,price`` rows for the requested periods.

    Returns the raw price matrix (S x T, columns ordered as ``periods``) and
    the sector labels in order of first appearance.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", path, 1) from None
        for req in ("period", "sector", "price"):
            if req not in header:
                raise ParseError(f"missing required column {req!r}", path, 1)
        col = {name: k for k, name in enumerate(header)}
        values: dict[tuple[str, str], float] = {}
        sectors: list[str] = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(rec)}", path, lineno)
            rec = [c.strip() for c in rec]
            key = (rec[col["sector"]], rec[col["period"]])
            if key in values:
                raise ParseError(f"duplicate price for sector {key[0]!r}, period {key[1]!r}", path, lineno)
            values[key] = _parse_float(rec[col["price"]], path, lineno, "price")
            if key[0] not in sectors:
                sectors.append(key[0])
    if not sectors:
        raise ParseError("no data rows", path)
    out = np.empty((len(sectors), len(periods)))
    for s, sector in enumerate(sectors):
        for j, period in enumerate(periods):
            if (sector, period) not in values:
                raise InputError(f"{path}: no {sector!r} price for period {period!r}")
            out[s, j] = values[(sector, period)]
    return out, tuple(sectors)


def write_panel_csv(path_or_file, panel: Panel, extra_exposures: dict[str, np.ndarray] | None = None) -> None:
    """Write a panel in the long format understood by :func:`read_panel_csv`."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        header = ["region", "period", "outcome"]
        if panel.treatment is not None:
            header.append("treatment")
        header.append("exposure")
        extra = extra_exposures or {}
        header += [f"exposure:{s}" for s in extra]
        if panel.cluster_id is not None:
            header.append("cluster")
        w.writerow(header)
        for i, r in enumerate(panel.region_labels):
            for j, p in enumerate(panel.period_labels):
                row = [r, p, repr(float(panel.outcome[i, j]))]
                if panel.treatment is not None:
                    row.append(repr(float(panel.treatment[i, j])))
                row.append(repr(float(panel.exposure[i])))
                row += [repr(float(v[i])) for v in extra.values()]
                if panel.cluster_id is not None:
                    row.append(str(int(panel.cluster_id[i])))
                w.writerow(row)
    finally:
        if own:
            fh.close()


def write_prices_csv(path_or_file, raw_prices: np.ndarray, sector_labels: Sequence[str],
                     period_labels: Sequence[str]) -> None:
    """Write raw prices in the ``period,sector,price`` format."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period", "sector", "price"])
        for j, p in enumerate(period_labels):
            for s, name in enumerate(sector_labels):
                w.writerow([p, name, repr(float(raw_prices[s, j]))])
    finally:
        if own:
            fh.close()

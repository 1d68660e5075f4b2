"""INI-style configuration files for scenarios, populations and the labor model.

Files are read with :mod:`configparser`.  Keys in ``[DEFAULT]`` apply to
every section.  Unknown keys raise :class:`~priceexposure.errors.ConfigError`
naming the key.

Scenario / population keys::

    n_regions, n_periods, n_sectors, focal, replications, seed,
    population_seed, fixed_effects, methods, price_family, price_scales,
    dependence, rho, beta_low, beta_high, kappa_low, kappa_high,
    exposure_low, exposure_high, exposure_common, alpha_scale, eta_sd,
    epsilon_sd, gamma_sd, center_prices

Labor-model sections::

    [model]          focal = <sector name>
    [internal]       sigma, theta            (default 2, 0.5)
    [sector:<name>]  sigma, theta, rho
    [region:<name>]  phi, shares (one per tradable, then internal),
                     efficiency, capital, labor, exposure
                     (scalar or one value per tradable)
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .dgp import PopulationConfig, PriceProcessSpec
from .errors import ConfigError, ParseError

POPULATION_KEYS = {
    "n_regions": int, "n_periods": int, "n_sectors": int, "focal": int,
    "beta_low": float, "beta_high": float, "kappa_low": float, "kappa_high": float,
    "exposure_low": float, "exposure_high": float, "exposure_common": float,
    "alpha_scale": float, "eta_sd": float, "epsilon_sd": float, "gamma_sd": float,
}
PRICE_KEYS = {"price_family", "price_scales", "dependence", "rho"}
RUN_KEYS = {"replications", "seed", "population_seed", "fixed_effects", "methods", "center_prices", "name"}
SCENARIO_KEYS = set(POPULATION_KEYS) | PRICE_KEYS | RUN_KEYS


def resolve(path) -> Path:
    """``path`` itself if it exists, else the bundled data file of that name."""
    p = Path(path)
    if not p.exists() and p.name == str(path):
        shipped = Path(__file__).parent / "data" / p.name
        if shipped.exists():
            return shipped
    return p


def _read(path) -> configparser.ConfigParser:
    path = resolve(path)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh, source=str(path))
    except FileNotFoundError:
        raise ParseError("file not found", str(path)) from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = str(exc).splitlines()[0]
        if isinstance(exc, configparser.ParsingError) and exc.errors:
            line, text = exc.errors[0]
            msg = f"cannot parse {text.strip()!r}"
        raise ParseError(msg, str(path), line) from None
    return cp


def _list(text: str, conv=float) -> tuple:
    parts = [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]
    return tuple(conv(p) for p in parts)


def _value(section: str, key: str, raw: str, conv):
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {conv.__name__}") from None


def _check_keys(section: str, keys, allowed) -> None:
    for key in keys:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")


def section_to_scenario(name: str, items: dict):
    """Build a :class:`~priceexposure.montecarlo.Scenario` from key/value strings."""
    from .montecarlo import Scenario

    _check_keys(name, items, SCENARIO_KEYS)
    for req in ("n_regions", "n_periods"):
        if req not in items:
            raise ConfigError(f"section [{name}] is missing required key {req!r}")
    pop_kw = {k: _value(name, k, v, POPULATION_KEYS[k]) for k, v in items.items() if k in POPULATION_KEYS}
    pop = PopulationConfig(**pop_kw)
    s = pop.n_sectors
    try:
        families = _list(items.get("price_family", "uniform"), str)
        scales = _list(items.get("price_scales", "1"), float)
        rho = _list(items.get("rho", "0"), float)
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from None
    if len(families) == 1:
        families = families * s
    if len(scales) == 1:
        scales = scales * s
    prices = PriceProcessSpec(families, scales, items.get("dependence", "independent"),
                              rho, pop.focal)
    methods = _list(items.get("methods", "price_exposure, ehw"), str)
    seed = _value(name, "seed", items.get("seed", "0"), int)
    pseed = items.get("population_seed")
    center = items.get("center_prices", "true").strip().lower()
    if center not in ("true", "false", "1", "0", "yes", "no"):
        raise ConfigError(f"[{name}] center_prices must be true or false")
    return Scenario(
        population=pop,
        prices=prices,
        replications=_value(name, "replications", items.get("replications", "1000"), int),
        fixed_effects=items.get("fixed_effects", "region").strip(),
        methods=methods,
        master_seed=seed,
        population_seed=None if pseed is None else _value(name, "population_seed", pseed, int),
        center_prices=center in ("true", "1", "yes"),
        name=items.get("name", "").strip(),
    )


def load_scenarios(path) -> tuple[str, list]:
    """Read every non-default section as one scenario; returns ``(title, scenarios)``.

    An optional ``[table]`` section holds ``title``.
    """
    cp = _read(path)
    title = ""
    rows = []
    for sec in cp.sections():
        if sec == "table":
            _check_keys(sec, [k for k in cp[sec] if k not in cp.defaults()], {"title"})
            title = cp[sec].get("title", "")
            continue
        items = dict(cp[sec])
        items.setdefault("name", sec)
        rows.append(section_to_scenario(sec, items))
    if not rows:
        raise ConfigError(f"{path}: no scenario sections found")
    return title, rows


def load_population(path):
    """Read a single-scenario file; returns its :class:`Scenario`.

    Used by the oracle and simulate commands, which need a population
    config, a price process and a seed.
    """
    _, rows = load_scenarios(path)
    if len(rows) != 1:
        raise ConfigError(f"{path}: expected exactly one scenario section, found {len(rows)}")
    return rows[0]


def load_model(path):
    """Read a labor-model file into :class:`~priceexposure.labor_model.LaborModelParams`.

    Returns ``(params, focal_index)``.
    """
    import numpy as np

    from .labor_model import LaborModelParams

    cp = _read(path)
    sectors, regions = [], []
    focal_name = None
    internal = {"sigma": 2.0, "theta": 0.5}
    for sec in cp.sections():
        items = {k: v for k, v in cp[sec].items()}
        if sec == "model":
            _check_keys(sec, items, {"focal"})
            focal_name = items.get("focal")
        elif sec == "internal":
            _check_keys(sec, items, {"sigma", "theta"})
            internal.update({k: _value(sec, k, v, float) for k, v in items.items()})
        elif sec.startswith("sector:"):
            _check_keys(sec, items, {"sigma", "theta", "rho"})
            for req in ("sigma", "theta"):
                if req not in items:
                    raise ConfigError(f"section [{sec}] is missing required key {req!r}")
            sectors.append((sec.split(":", 1)[1].strip(), {k: _value(sec, k, v, float) for k, v in items.items()}))
        elif sec.startswith("region:"):
            _check_keys(sec, items, {"phi", "shares", "efficiency", "capital", "labor", "exposure"})
            for req in ("phi", "shares"):
                if req not in items:
                    raise ConfigError(f"section [{sec}] is missing required key {req!r}")
            parsed = {}
            for k, v in items.items():
                try:
                    parsed[k] = _list(v, float)
                except ValueError:
                    raise ConfigError(f"[{sec}] {k} = {v!r} is not a number list") from None
            regions.append((sec.split(":", 1)[1].strip(), parsed))
        else:
            raise ConfigError(f"unknown section [{sec}]")
    if not sectors or not regions:
        raise ConfigError(f"{path}: need at least one [sector:...] and one [region:...] section")
    names = [n for n, _ in sectors]
    focal = 0 if focal_name is None else (names.index(focal_name) if focal_name in names else -1)
    if focal < 0:
        raise ConfigError(f"focal sector {focal_name!r} has no [sector:{focal_name}] section")
    k = len(sectors)
    rho = [1.0 if j == focal else s.get("rho", 0.0) for j, (_, s) in enumerate(sectors)]

    def per_sector(vals, key, rname):
        if vals is None:
            return [1.0] * k
        if len(vals) == 1:
            return list(vals) * k
        if len(vals) != k:
            raise ConfigError(f"[region:{rname}] {key} needs 1 or {k} values, got {len(vals)}")
        return list(vals)

    cap = {key: [] for key in ("efficiency", "capital", "labor", "exposure")}
    for rname, r in regions:
        if len(r["phi"]) != 1:
            raise ConfigError(f"[region:{rname}] phi must be a single value")
        if len(r["shares"]) != k + 1:
            raise ConfigError(f"[region:{rname}] shares needs {k + 1} values (tradables then internal)")
        for key in cap:
            cap[key].append(per_sector(r.get(key), key, rname))
    params = LaborModelParams(
        sigma=np.array([s["sigma"] for _, s in sectors]),
        theta=np.array([s["theta"] for _, s in sectors]),
        phi=np.array([r["phi"][0] for _, r in regions]),
        shares=np.array([r["shares"] for _, r in regions]),
        rho=np.array(rho),
        efficiency=np.array(cap["efficiency"]),
        capital=np.array(cap["capital"]),
        labor=np.array(cap["labor"]),
        exposure=np.array(cap["exposure"]),
        sigma_internal=internal["sigma"],
        theta_internal=internal["theta"],
        region_labels=tuple(n for n, _ in regions),
        sector_labels=tuple(names),
    )
    return params, focal


def bundled(name: str) -> Path:
    """Path of a data file shipped with the package."""
    p = Path(__file__).parent / "data" / name
    if not p.exists():
        raise ParseError("no such bundled file", str(p))
    return p

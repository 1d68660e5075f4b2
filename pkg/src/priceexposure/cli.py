"""Command-line interface.

Subcommands: ``estimate``, ``mc``, ``oracle``, ``sensitivity``, ``model`` and
``simulate``.  Exit status is 0 on success, 2 for input errors and 3 for
numerical degeneracies.  JSON output is sorted and excludes timings unless
``--timing`` is given, so repeated runs with one seed are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_model, load_population, load_scenarios, resolve
from .dgp import draw_population, draw_prices, generate_panel
from .errors import DegeneracyError, InputError, PriceExposureError
from .estimands import iv_estimand, twfe_estimand, weight_audit
from .estimators import EstimatorSpec, fit_2sls, fit_first_stage, fit_ols, fit_reduced_form
from .inference import METHODS, canonical_method, heterogeneity_diagnostic, variance
from .labor_model import compute_kappa, sweep_phi, threshold_phi
from .montecarlo import format_table, reports_json, run_scenario, write_replications_csv
from .panel import PriceSystem, center_log_prices, read_panel_csv, read_prices_csv, write_panel_csv, write_prices_csv
from .sensitivity import FORMS, imbens_manski_interval

EXIT_INPUT = 2
EXIT_DEGENERATE = 3
COLUMNS = (("first_stage", "First stage"), ("reduced_form", "Reduced form"), ("ols", "OLS"),
           ("two_sls", "2SLS"))
LABELS = {"price_exposure": "P-E SE", "ehw": "Robust SE", "cluster_region": "Clustered SE (region)",
          "cluster_time": "Clustered SE (time)"}


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(obj) -> str:
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not serializable: {type(o).__name__}")

    def scrub(o):
        if isinstance(o, float) and not math.isfinite(o):
            return None if math.isnan(o) else ("inf" if o > 0 else "-inf")
        if isinstance(o, dict):
            return {k: scrub(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [scrub(v) for v in o]
        return o

    return json.dumps(scrub(obj), indent=2, sort_keys=True, default=default) + "\n"


def emit(args, payload: dict, text: str | None) -> None:
    blob = dump_json(payload)
    if getattr(args, "output", None):
        Path(args.output).write_text(blob, encoding="utf-8")
    if args.format == "json" or text is None:
        sys.stdout.write(blob)
    else:
        sys.stdout.write(text.rstrip("\n") + "\n")


def parse_methods(text: str) -> tuple[str, ...]:
    out = []
    for part in text.split(","):
        if part.strip():
            m = canonical_method(part.strip())
            if m not in out:
                out.append(m)
    if not out:
        raise InputError("--methods needs at least one method")
    return tuple(out)


# --------------------------------------------------------------------------- estimate


def cmd_estimate(args) -> int:
    controls = [c.strip() for c in args.controls.split(",") if c.strip()] if args.controls else []
    panel, extra = read_panel_csv(args.panel, controls)
    raw, sectors = read_prices_csv(args.prices, panel.period_labels)
    focal_name = args.focal or sectors[0]
    if focal_name not in sectors:
        raise InputError(f"focal sector {focal_name!r} not found in {args.prices}")
    for c in controls:
        if c not in sectors:
            raise InputError(f"control sector {c!r} not found in {args.prices}")
    if args.no_center:
        if np.any(raw <= 0):
            raise InputError("prices must be positive")
        logp = np.log(raw)
    else:
        logp = center_log_prices(raw, sectors, panel.period_labels)
    prices = PriceSystem(logp, sectors.index(focal_name), sector_labels=sectors)
    methods = parse_methods(args.methods)
    pairs = tuple((extra[c], logp[sectors.index(c)]) for c in controls)
    spec = EstimatorSpec("two_sls", args.fixed_effects, pairs, tuple(controls))

    fits = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fits["first_stage"] = fit_first_stage(panel, prices, spec)
        fits["reduced_form"] = fit_reduced_form(panel, prices, spec)
        fits["ols"] = fit_ols(panel, prices, EstimatorSpec("ols", args.fixed_effects))
        fits["two_sls"] = fit_2sls(panel, prices, spec)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    estimates = {}
    for key, fit in fits.items():
        block = fit.to_dict()
        block["variance"] = {m: variance(fit, panel, prices, m, cr1=args.cr1).to_dict() for m in methods}
        estimates[key] = block
    ratio = fits["reduced_form"].coefficient / fits["first_stage"].coefficient
    report = {
        "spec": {
            "fixed_effects": args.fixed_effects,
            "focal_sector": focal_name,
            "controls": controls,
            "methods": list(methods),
            "cr1": bool(args.cr1),
            "centered_prices": not args.no_center,
        },
        "estimates": estimates,
        "checks": {"reduced_form_over_first_stage": ratio},
        "n_regions": panel.n_regions,
        "n_periods": panel.n_periods,
        "metadata": {
            "version": __version__,
            "seed": args.seed,
            "inputs": {"panel": sha256(args.panel), "prices": sha256(args.prices)},
        },
    }
    if args.b_lower is not None or args.b_upper is not None:
        b_lo = args.b_lower if args.b_lower is not None else 0.0
        b_hi = args.b_upper if args.b_upper is not None else 0.0
        se_method = "price_exposure" if "price_exposure" in methods else methods[0]
        se = estimates["two_sls"]["variance"][se_method]["std_error"]
        sens = imbens_manski_interval(fits["two_sls"].coefficient, se, b_lo, b_hi, args.alpha,
                                      args.im_form, args.null)
        report["sensitivity"] = {**sens.to_dict(), "std_error_method": se_method}
    emit(args, report, estimate_table(report))
    return 0


def estimate_table(report: dict) -> str:
    est = report["estimates"]
    methods = report["spec"]["methods"]
    head = ["", *[label for _, label in COLUMNS]]
    rows = [["Coefficient", *[f"{est[k]['coefficient']:.4f}" for k, _ in COLUMNS]]]
    for m in methods:
        rows.append([LABELS.get(m, m), *[f"({est[k]['variance'][m]['std_error']:.4f})" for k, _ in COLUMNS]])
    n_obs = report["n_regions"] * report["n_periods"]
    rows.append(["Observations", *[str(n_obs)] * len(COLUMNS)])
    rows.append(["Fixed effects", *[report["spec"]["fixed_effects"]] * len(COLUMNS)])
    widths = [max(len(r[k]) for r in [head, *rows]) for k in range(len(head))]
    lines = ["  ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(r, widths)))
             for r in [head, *rows]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    if "sensitivity" in report:
        s = report["sensitivity"]
        lo, hi = s["im_interval"]
        lines.append("")
        lines.append(f"Identified set [{s['identified_set'][0]:.4f}, {s['identified_set'][1]:.4f}]; "
                     f"IM {s['interval_form']} interval [{lo:.4f}, {hi:.4f}] (C = {s['im_constant']:.4f}); "
                     f"breakdown point {s['breakdown_point']:.4f}")
    return "\n".join(lines)


# --------------------------------------------------------------------------- mc


def cmd_mc(args) -> int:
    title, rows = load_scenarios(args.config)
    if args.seed is not None:
        rows = [r.with_seed(args.seed) for r in rows]
    if args.replications is not None:
        from dataclasses import replace

        rows = [replace(r, replications=args.replications) for r in rows]
    reports = []
    per_rep = []
    for sc in rows:
        if args.replications_csv:
            reps = []
            reports.append(run_scenario(sc, args.workers, reps))
            per_rep.append((sc, reps))
        else:
            reports.append(run_scenario(sc, args.workers))
    if args.replications_csv:
        write_replications_csv(args.replications_csv, per_rep)
    payload = json.loads(reports_json(reports, args.timing))
    payload["title"] = title
    payload["metadata"] = {"version": __version__, "config": sha256(resolve(args.config)),
                           "seed_override": args.seed}
    emit(args, payload, format_table(reports, title))
    return 0


# --------------------------------------------------------------------------- oracle


def cmd_oracle(args) -> int:
    sc = load_population(args.config)
    seed = args.seed if args.seed is not None else (
        sc.population_seed if sc.population_seed is not None else sc.master_seed)
    pop = draw_population(sc.population, seed)
    decomp = iv_estimand(pop, sc.prices)
    out = {
        "config": sc.to_dict(),
        "population_seed": seed,
        "iv": decomp.to_dict(),
        "weight_audit": weight_audit(decomp, pop.region_labels),
        "heterogeneity": heterogeneity_diagnostic(pop, sc.prices, decomp.total).to_dict(),
        "metadata": {"version": __version__, "config": sha256(resolve(args.config))},
    }
    if pop.n_periods == 2:
        tw = twfe_estimand(pop, sc.prices)
        out["twfe"] = tw.to_dict()
    lines = [f"estimand {decomp.total:.6f} = main {decomp.main_term:.6f} + price {decomp.contamination_price:.6f}"
             f" + GE {decomp.contamination_ge:.6f}",
             f"convex: {decomp.convex}   weakly causal: {decomp.weakly_causal}   "
             f"negative weight mass: {out['weight_audit']['negative_mass']:.4f}"]
    if "twfe" in out:
        lines.append(f"TWFE estimand {out['twfe']['total']:.6f} (main {out['twfe']['main_term']:.6f})")
    emit(args, out, "\n".join(lines))
    return 0


# --------------------------------------------------------------------------- sensitivity


def cmd_sensitivity(args) -> int:
    beta_hat, se = args.beta_hat, args.se
    source = None
    if args.report:
        rep = json.loads(Path(args.report).read_text(encoding="utf-8"))
        try:
            block = rep["estimates"]["two_sls"]
            beta_hat = block["coefficient"] if beta_hat is None else beta_hat
            method = canonical_method(args.method)
            se = block["variance"][method]["std_error"] if se is None else se
        except (KeyError, TypeError):
            raise InputError(f"{args.report} is not an estimate report with a 2SLS {args.method} block") from None
        source = sha256(args.report)
    if beta_hat is None or se is None:
        raise InputError("give --beta-hat and --se, or --report")
    res = imbens_manski_interval(beta_hat, se, args.b_lower, args.b_upper, args.alpha, args.form, args.null)
    out = {**res.to_dict(), "metadata": {"version": __version__, "report": source}}
    lo, hi = res.im_interval
    text = (f"beta_hat {beta_hat:.6f}  se {se:.6f}\n"
            f"identified set [{res.bound_lower:.6f}, {res.bound_upper:.6f}]\n"
            f"IM constant {res.im_constant:.6f}; {res.form} interval [{lo:.6f}, {hi:.6f}]\n"
            f"breakdown point (null {res.null_value:g}): {res.breakdown_point:.6f}")
    emit(args, out, text)
    return 0


# --------------------------------------------------------------------------- model


def cmd_model(args) -> int:
    params, focal = load_model(args.config)
    if args.focal is not None:
        if args.focal not in params.sector_labels:
            raise InputError(f"unknown sector {args.focal!r}")
        focal = params.sector_labels.index(args.focal)
    prof = compute_kappa(params, focal)
    out = {"profile": prof.to_dict(params),
           "threshold_phi": {r: (None if math.isnan(v) else float(v))
                             for r, v in zip(params.region_labels, threshold_phi(params, focal))},
           "metadata": {"version": __version__, "config": sha256(resolve(args.config))}}
    if args.sweep_region is not None:
        if args.sweep_region not in params.region_labels:
            raise InputError(f"unknown region {args.sweep_region!r}")
        idx = params.region_labels.index(args.sweep_region)
        grid = np.linspace(args.phi_min, args.phi_max, args.phi_steps)
        sweep = sweep_phi(params, grid, focal, idx)
        crossings = [0.5 * (a["phi"] + b["phi"]) for a, b in zip(sweep, sweep[1:])
                     if a["monotone"] != b["monotone"]]
        out["sweep"] = {"region": args.sweep_region, "points": sweep, "crossings": crossings}
    lines = [f"focal sector {params.sector_labels[focal]}; threshold S < {prof.threshold:.4f}"]
    lines.append(f"{'region':<12}{'lambda':>10}{'S_iq':>10}{'kappa':>12}  monotone")
    for r, reg in enumerate(out["profile"]["regions"]):
        lines.append(f"{reg['region']:<12}{reg['lambda']:>10.4f}{reg['exposure_index']:>10.4f}"
                     f"{reg['kappa']:>12.6f}  {reg['monotone']}")
    lines.append(f"non-monotone regions: {out['profile']['n_non_monotone']}")
    if "sweep" in out:
        lines.append(f"sweep over phi in region {args.sweep_region}: sign change near {out['sweep']['crossings']}")
    emit(args, out, "\n".join(lines))
    return 0


# --------------------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    sc = load_population(args.config)
    seed = args.seed if args.seed is not None else sc.master_seed
    pop = draw_population(sc.population, seed)
    prices = draw_prices(sc.prices, sc.n_periods, np.random.default_rng([seed, 0]))
    labels = tuple(f"{t + 1}" for t in range(sc.n_periods))
    panel = generate_panel(pop, prices, period_labels=labels)
    if args.clusters:
        from .panel import Panel

        ids = np.arange(pop.n_regions) % args.clusters
        panel = Panel(panel.outcome, panel.exposure, panel.treatment, ids, panel.region_labels, labels)
    names = sc.prices.sector_labels
    extra = {names[s]: pop.exposure[:, s] for s in range(pop.n_sectors) if s != pop.focal}
    write_panel_csv(args.panel_out, panel, extra)
    write_prices_csv(args.prices_out, np.exp(prices.log_prices), names, labels)
    out = {"panel": args.panel_out, "prices": args.prices_out, "seed": seed,
           "estimand": iv_estimand(pop, sc.prices).total,
           "panel_sha256": sha256(args.panel_out), "prices_sha256": sha256(args.prices_out)}
    emit(args, out, f"wrote {args.panel_out} and {args.prices_out} (estimand {out['estimand']:.6f})")
    return 0


# --------------------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("text", "json"), default="text",
                   help="stdout format: aligned text (default) or JSON")
    p.add_argument("--output", "-o", metavar="FILE", help="also write the JSON report to FILE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="priceexposure",
        description="Estimation, design-based inference and simulation for price-exposure designs.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("estimate", help="first stage, reduced form, OLS and 2SLS with standard errors",
                       description="Fit first stage, reduced form, OLS and 2SLS on a panel CSV and report "
                                   "price-exposure and clustered standard errors side by side.")
    p.add_argument("--panel", required=True, metavar="CSV",
                   help="long panel: region,period,outcome,treatment,exposure[,cluster][,exposure:<sector>]")
    p.add_argument("--prices", required=True, metavar="CSV", help="raw prices: period,sector,price")
    p.add_argument("--focal", metavar="SECTOR", help="focal sector label (default: first sector in the prices file)")
    p.add_argument("--controls", metavar="S1,S2", help="sectors whose exposure:<sector> columns enter as controls")
    p.add_argument("--fixed-effects", choices=("none", "region", "time", "two_way"), default="two_way",
                   help="fixed-effect transform (default two_way)")
    p.add_argument("--methods", default="price_exposure,cluster_region",
                   help=f"comma-separated variance methods from {', '.join(METHODS)} (aliases pe, robust)")
    p.add_argument("--cr1", action="store_true", help="apply the G/(G-1) small-sample factor to clustered variances")
    p.add_argument("--no-center", action="store_true", help="use log prices without demeaning over time")
    p.add_argument("--b-lower", type=float, help="lower contamination bound; adds a sensitivity block")
    p.add_argument("--b-upper", type=float, help="upper contamination bound; adds a sensitivity block")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level for the sensitivity block")
    p.add_argument("--null", type=float, default=0.0, help="null value for the breakdown point")
    p.add_argument("--im-form", choices=FORMS, default="symmetric", help="Imbens-Manski interval form")
    p.add_argument("--seed", type=int, default=0, help="recorded in the report metadata (estimation is deterministic)")
    _common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("mc", help="run a Monte Carlo coverage table",
                       description="Run every scenario in a config file and print bias, mean SE and coverage.")
    p.add_argument("config", help="scenario config file (INI sections, one per row)")
    p.add_argument("--seed", type=int, help="override the master seed of every row")
    p.add_argument("--replications", type=int, help="override the number of replications of every row")
    p.add_argument("--workers", type=int, help="worker processes (default: PRICEEXPOSURE_WORKERS or 1)")
    p.add_argument("--replications-csv", metavar="FILE", help="write per-replication estimates to FILE")
    p.add_argument("--timing", action="store_true", help="include wall-clock times in the JSON")
    _common(p)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("oracle", help="closed-form estimand decomposition for a drawn population",
                       description="Draw the population of a single-scenario config and report the 2SLS "
                                   "estimand decomposition, a weight audit and the heterogeneity diagnostic "
                                   "(plus the TWFE estimand when T = 2).")
    p.add_argument("config", help="single-scenario config file")
    p.add_argument("--seed", type=int, help="population seed (default: the config's seed)")
    _common(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sensitivity", help="identified set, Imbens-Manski interval and breakdown point",
                       description="Bounds and Imbens-Manski interval under contamination in [b-lower, b-upper].")
    p.add_argument("--beta-hat", type=float, help="point estimate")
    p.add_argument("--se", type=float, help="standard error")
    p.add_argument("--report", metavar="JSON", help="read beta-hat and SE from an estimate report")
    p.add_argument("--method", default="price_exposure", help="which SE to take from --report")
    p.add_argument("--b-lower", type=float, default=0.0, help="lower contamination bound")
    p.add_argument("--b-upper", type=float, default=0.0, help="upper contamination bound")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level")
    p.add_argument("--null", type=float, default=0.0, help="null value for the breakdown point")
    p.add_argument("--form", choices=FORMS, default="symmetric", help="Imbens-Manski interval form")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; the computation is deterministic")
    _common(p)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("model", help="labor-model first-stage profile and monotonicity",
                       description="Evaluate first-stage slopes and monotonicity flags for a labor-model config.")
    p.add_argument("config", help="labor-model config file")
    p.add_argument("--focal", metavar="SECTOR", help="override the focal sector")
    p.add_argument("--sweep-region", metavar="REGION", help="sweep phi for this region")
    p.add_argument("--phi-min", type=float, default=0.05, help="sweep lower end")
    p.add_argument("--phi-max", type=float, default=5.0, help="sweep upper end")
    p.add_argument("--phi-steps", type=int, default=100, help="number of sweep points")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; the computation is deterministic")
    _common(p)
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("simulate", help="write a synthetic panel and price file",
                       description="Draw a population and one price path and write them as CSV inputs for estimate.")
    p.add_argument("config", help="single-scenario config file")
    p.add_argument("--panel-out", required=True, metavar="CSV", help="panel CSV to write")
    p.add_argument("--prices-out", required=True, metavar="CSV", help="prices CSV to write")
    p.add_argument("--clusters", type=int, help="assign regions round-robin to this many clusters")
    p.add_argument("--seed", type=int, help="seed (default: the config's seed)")
    _common(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DegeneracyError as exc:
        print(f"degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except PriceExposureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: simulate, fit, plot, report.

Exit codes are 0 on success, 1 on runtime errors and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .evidence import EvidenceError, default_workers, fit_space, load_model_space
from .ingest import read_table
from .mcmc import SamplerConfig, SamplerError
from .model import FitResult, ValidationError
from .plot import DEFAULT_EDGES, PlotOptions, histogram_bins, render_zcurve
from .predictive import DrawTable, GridConfig, draw_table, predictive_curve
from .results import (
    SchemaError,
    ensemble_table,
    fit_document,
    load_fit,
    metrics_from_document,
    result_from_document,
    save_fit,
)
from .evidence import model_averaged_draws
from .simulate import PRESETS, preset_config, simulate_studies, write_simulation

log = logging.getLogger("zcurvemeta")

CURVE_ALIASES = {
    "re": "mu-tau-none",
    "fe": "mu-tau0-none",
    "pet": "mu-tau-PET",
    "peese": "mu-tau-PEESE",
    "3psm": "mu-tau-S1",
}
ENSEMBLE_CURVES = {"robma": None, "robma_full": "full", "robma_bias": "bias"}
CURVE_DRAWS = 2000


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zcurvemeta", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic literature")
    s.add_argument("--k", type=int, required=True, help="number of published studies")
    s.add_argument("--d", type=float, default=0.3, help="mean true effect (default 0.3)")
    s.add_argument("--tau", type=float, default=0.15, help="heterogeneity sd (default 0.15)")
    s.add_argument("--bias", choices=sorted(PRESETS), default="none")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="CSV path; a .provenance.json sidecar is written next to it")

    f = sub.add_parser("fit", help="fit the model space and write a results JSON")
    f.add_argument("data", help="CSV with columns y,se")
    f.add_argument("--space", default="default", help="'default' or a model-space JSON file")
    f.add_argument("--chains", type=int, default=4)
    f.add_argument("--iter", type=int, default=5000, help="retained iterations per chain")
    f.add_argument("--warmup", type=int, default=2000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--workers", type=int, default=None,
                   help="parallel model fits (default: ZCURVEMETA_WORKERS or 1)")
    f.add_argument("--importance-samples", type=int, default=50_000)
    f.add_argument("--ensemble", choices=("bias", "full"), default="bias",
                   help="reference ensemble for metrics (default: bias-adjusted models only)")
    f.add_argument("--direction", choices=("positive", "negative"), default="positive",
                   help="expected sign of effects; negative flips the data before fitting")
    f.add_argument("--full", action="store_true", help="store every retained draw")
    f.add_argument("--out", required=True)

    g = sub.add_parser("plot", help="z-curve figure from a fit")
    g.add_argument("fit", help="results JSON from 'fit'")
    g.add_argument("data", help="the CSV that was fitted")
    g.add_argument("--curves", default="re,robma",
                   help="comma list: re, fe, pet, peese, 3psm, robma, robma_full, robma_bias or model names")
    g.add_argument("--extrapolate", action="store_true", help="add bias-removed curves")
    g.add_argument("--band", type=float, nargs="?", const=0.95, default=None,
                   help="draw pointwise bands at this level (default 0.95 when given)")
    g.add_argument("--bin-width", type=float, default=0.25)
    g.add_argument("--draws", type=int, default=CURVE_DRAWS, help="posterior draws per curve")
    g.add_argument("--out", required=True, help="SVG path; plot data goes to <out>.csv")

    r = sub.add_parser("report", help="print a summary table of a fit")
    r.add_argument("fit")
    return p


def _cmd_simulate(args, parser) -> int:
    if args.k < 1:
        parser.error("--k must be >= 1")
    if not (args.tau >= 0 and math.isfinite(args.tau)):
        parser.error("--tau must be finite and >= 0")
    if not math.isfinite(args.d):
        parser.error("--d must be finite")
    data, prov = simulate_studies(preset_config(args.k, args.bias, args.d, args.tau, args.seed))
    prov["preset"] = args.bias
    write_simulation(data, prov, args.out)
    log.info("wrote %d studies (%d generated) to %s", data.n, prov["generated"], args.out)
    return 0


def _cmd_fit(args, parser) -> int:
    if args.chains < 1 or args.iter < 1 or args.warmup < 0:
        parser.error("--chains and --iter must be >= 1, --warmup >= 0")
    if args.workers is not None and args.workers < 1:
        parser.error("--workers must be >= 1")
    data = read_table(args.data)
    if args.direction == "negative":
        data = data.flipped()
    space = load_model_space(args.space)
    cfg = SamplerConfig(chains=args.chains, warmup=args.warmup, iterations=args.iter, seed=args.seed)
    workers = default_workers() if args.workers is None else args.workers
    log.info("fitting %d models to %d studies with %d worker(s)", len(space), data.n, workers)
    result = fit_space(space, data, cfg, workers=workers, n_importance=args.importance_samples)
    config = {
        "seed": args.seed,
        "sampler": cfg.to_dict(),
        "importance_samples": args.importance_samples,
        "direction": args.direction,
        "space_source": args.space if args.space == "default" else Path(args.space).name,
    }
    doc = fit_document(result, data, config, ensemble=args.ensemble, full_draws=args.full)
    save_fit(doc, args.out)
    for note in doc["notes"]:
        print(f"warning: {note}", file=sys.stderr)
    return 0


def _curve_table(result: FitResult, name: str, ensemble_default: str, count: int, seed: int):
    """Draw table and notes for one requested curve name."""
    if name in ENSEMBLE_CURVES:
        mode = ENSEMBLE_CURVES[name] or ensemble_default
        return ensemble_table(result, mode, count, seed)
    # model names take precedence over aliases
    target = name if name in result.space.names else CURVE_ALIASES.get(name, name)
    if target not in result.space.names:
        raise KeyError(name)
    k = result.space.index(target)
    probs = [1.0 if j == k else 0.0 for j in range(len(result.space))]
    pooled = model_averaged_draws(result.space, result.fits, count, seed, probs)
    return draw_table(result.space, result.fits, pooled), []


def _available_curves(result: FitResult) -> list[str]:
    aliases = [a for a, n in CURVE_ALIASES.items() if n in result.space.names and a not in result.space.names]
    return list(ENSEMBLE_CURVES) + aliases + list(result.space.names)


def _cmd_plot(args, parser) -> int:
    if args.band is not None and not 0 < args.band < 1:
        parser.error("--band must lie in (0, 1)")
    if args.bin_width <= 0:
        parser.error("--bin-width must be positive")
    if args.draws < 2:
        parser.error("--draws must be >= 2")
    names = [c.strip() for c in args.curves.split(",") if c.strip()]
    doc = load_fit(args.fit)
    result = result_from_document(doc)
    data = read_table(args.data)
    if doc["config"].get("direction") == "negative":
        data = data.flipped()
    seed = int(doc["config"]["seed"])
    grid_cfg = GridConfig(band=args.band or 0.95)
    curves = []
    for name in names:
        try:
            table, notes = _curve_table(result, name, doc["config"]["ensemble"], args.draws, seed)
        except KeyError:
            parser.error(f"unknown curve {name!r}; available: {', '.join(_available_curves(result))}")
        if args.extrapolate and not table.is_selection.any() and not _has_regression_bias(table):
            notes.append(f"curve {name!r} has no bias-adjusted draws; extrapolated equals fitted")
        for note in notes:
            print(f"warning: {note}", file=sys.stderr)
        curves.append((name, predictive_curve(table, data, grid_cfg)))
    hist = histogram_bins(data, DEFAULT_EDGES, args.bin_width, (grid_cfg.z_min, grid_cfg.z_max))
    svg, csv = render_zcurve(hist, curves, PlotOptions(extrapolate=args.extrapolate, band=args.band is not None))
    out = Path(args.out)
    out.write_text(svg, encoding="utf-8")
    out.with_suffix(".csv").write_text(csv, encoding="utf-8")
    return 0


def _has_regression_bias(table: DrawTable) -> bool:
    kinds = {table.specs[k].bias.kind for k in set(table.model_idx.tolist())}
    return bool(kinds & {"pet", "peese"})


def _fmt(s) -> str:
    return f"{s['median']:.3f} [{s['lower']:.3f}, {s['upper']:.3f}]"


def _fmt_bf(v) -> str:
    v = float(v)
    if math.isinf(v):
        return "inf"
    return f"{v:.4g}"


def format_report(doc: dict) -> str:
    """Human-readable summary of a results document."""
    m = metrics_from_document(doc)
    bfs = doc["inclusion_bf"]
    rows = [
        ("Studies", str(doc["data"]["n"])),
        ("Reference ensemble", doc["config"]["ensemble"]),
        ("ODR", f"{m.odr:.3f}"),
        ("EDR", _fmt(m.edr.to_dict())),
        ("FDR (max)", _fmt(m.fdr.to_dict())),
        ("N missing", f"{m.n_missing.median:.1f} [{m.n_missing.lower:.1f}, {m.n_missing.upper:.1f}]"),
        ("BF effect", _fmt_bf(bfs.get("effect", "nan"))),
        ("BF heterogeneity", _fmt_bf(bfs.get("heterogeneity", "nan"))),
        ("BF bias", _fmt_bf(bfs.get("bias", "nan"))),
        ("mu (averaged)", _fmt(doc["mu"])),
        ("tau (averaged)", _fmt(doc["tau"])),
    ]
    width = max(len(k) for k, _ in rows)
    lines = [f"{k:<{width}}  {v}" for k, v in rows]
    for comp, flag in sorted(doc.get("bf_flags", {}).items()):
        lines.append(f"note: BF {comp}: {flag}")
    for flag in m.flags:
        lines.append(f"note: {flag}")
    top = sorted(doc["models"], key=lambda e: (-float(e["posterior_prob"]), e["name"]))[:5]
    lines.append("")
    lines.append(f"{'model':<18}{'prior':>8}{'posterior':>11}{'log ML':>12}  method")
    for e in top:
        lines.append(f"{e['name']:<18}{e['prior_prob']:>8.4f}{float(e['posterior_prob']):>11.4f}"
                     f"{float(e['log_ml']):>12.3f}  {e['method']}")
    return "\n".join(lines) + "\n"


def _cmd_report(args, parser) -> int:
    sys.stdout.write(format_report(load_fit(args.fit)))
    return 0


COMMANDS = {"simulate": _cmd_simulate, "fit": _cmd_fit, "plot": _cmd_plot, "report": _cmd_report}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, parser)
    except (ValidationError, SamplerError, EvidenceError, SchemaError, FileNotFoundError,
            IsADirectoryError, UnicodeDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command line interface for the MRP pipeline: ``mrp <subcommand> ...``.

Every subcommand accepts ``--config FILE.json``; keys in the file become
defaults and explicit flags override them. ``MRP_SEED`` supplies the seed
when neither the file nor a flag sets one.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import (SurveySchema, load_cell_table, load_survey, validate_compatibility, write_cell_table,
                   write_survey)
from .figure import FigureOptions, emit_state_grid_figure
from .inference.results import SamplerConfig, diagnostics_json, load_fit, save_fit
from .model import ModelSpec, survey_data
from .pipeline import METHODS, PipelineConfig, PipelineError, default_seed, fit_model, run_pipeline
from .poststrat import EstimateSeries, estimate_series
from .replication.compare import compare_runs
from .replication.manifest import ManifestError, verify_manifest, write_manifest
from .replication.simulate import PRESETS, SyntheticConfig, simulate_survey, synthetic_cell_table
from .states import STATE_FILTERS

log = logging.getLogger("mrp")

EXIT_ERROR = 2
EXIT_UNCONVERGED = 3


def _schema(args):
    if getattr(args, "schema", None):
        return SurveySchema.from_json(args.schema)
    return SurveySchema()


def _spec(args):
    if getattr(args, "spec", None):
        return ModelSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
    return ModelSpec.default()


def _sampler(args):
    seed = args.seed if args.seed is not None else default_seed()
    return SamplerConfig(chains=args.chains, warmup=args.warmup, samples=args.samples,
                         target_accept=args.target_accept, max_tree_depth=args.max_tree_depth, seed=seed,
                         parametrization=args.parametrization)


def cmd_ingest(args):
    table = load_cell_table(args.cell_table)
    data = load_survey(args.survey, _schema(args))
    report = validate_compatibility(data, table)
    doc = {"n": data.n, "source_meta": data.source_meta, "compatibility": report.to_dict()}
    text = json.dumps(doc, sort_keys=True, indent=1, default=str) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_fit(args):
    table = load_cell_table(args.cell_table)
    data = load_survey(args.survey, _schema(args))
    fit = fit_model(survey_data(data, _spec(args), table.state_share), args.method, _sampler(args),
                    args.tolerance)
    out = Path(args.out)
    save_fit(fit, out)
    (out / "diagnostics.json").write_text(diagnostics_json(fit), encoding="utf-8")
    for w in fit.warnings:
        log.warning("%s", w)
    print(f"{fit.kind} fit written to {out} (converged={fit.converged})")
    return 0 if fit.converged or args.allow_unconverged else EXIT_UNCONVERGED


def cmd_poststratify(args):
    fit = load_fit(args.fit)
    table = load_cell_table(args.cell_table)
    data = load_survey(args.survey, _schema(args)) if args.survey else None
    series = estimate_series(fit, table, data, survey_id=args.survey_id or "")
    series.to_csv(args.out)
    print(f"{len(series)} rows written to {args.out}")
    return 0


def cmd_figure(args):
    series = EstimateSeries.from_csv(args.estimates)
    share = load_cell_table(args.cell_table).state_share if args.cell_table else None
    order = args.order or ("state_predictor" if share is not None else "state")
    opts = FigureOptions(state_filter=args.filter, slices=tuple(args.slices), order=order, title=args.title or "")
    svg, csv_path, states = emit_state_grid_figure(series, args.out, opts, share)
    print(f"{len(states)} panels -> {svg} (+ {csv_path.name})")
    return 0


def cmd_simulate(args):
    seed = args.seed if args.seed is not None else default_seed()
    if args.preset:
        cfg = SyntheticConfig.preset(args.preset, seed=seed, truth_seed=args.truth_seed, bias_scale=args.bias_scale)
    else:
        cfg = SyntheticConfig(n=args.n, seed=seed, truth_seed=args.truth_seed, bias_scale=args.bias_scale,
                              survey_id=args.survey_id or "synthetic")
    table = synthetic_cell_table(args.table_seed)
    data, truth = simulate_survey(cfg, table, _spec(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_survey(data, out / "survey.csv")
    write_cell_table(table, out / "cells.csv")
    truth.series.to_csv(out / "truth.csv")
    (out / "truth.json").write_text(json.dumps({
        "population_value": truth.population_value,
        "fixed": truth.params.fixed.tolist(),
        "sigma": truth.params.sigma.tolist(),
        "config": {"n": cfg.n, "seed": cfg.seed, "truth_seed": cfg.truth_seed, "bias_scale": cfg.bias_scale},
    }, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(f"simulated n={data.n} into {out}")
    return 0


def cmd_compare(args):
    a, b = EstimateSeries.from_csv(args.a), EstimateSeries.from_csv(args.b)
    weights = load_cell_table(args.cell_table).state_totals if args.cell_table else None
    report = compare_runs(a, b, weights)
    text = report.to_json(args.out_json)
    if args.out_csv:
        report.to_csv(args.out_csv)
    if not args.out_json:
        sys.stdout.write(text)
    return 0


def _named_paths(items):
    out = {}
    for item in items or []:
        name, _, path = item.partition("=")
        if not path:
            raise SystemExit(f"expected NAME=PATH, got {item!r}")
        out[name] = path
    return out


def cmd_manifest(args):
    if args.stage == "verify":
        checked = verify_manifest(args.out, configs=_named_paths(args.config_file),
                                  outputs=_named_paths(args.output), pre_manifest=args.pre)
        print(f"verified: {', '.join(checked) or 'manifest structure'}")
        return 0
    write_manifest(args.stage, args.out, configs=_named_paths(args.config_file),
                   outputs=_named_paths(args.output), pre_manifest=args.pre, statement=args.statement or "",
                   data_files=_named_paths(args.data))
    print(f"{args.stage} manifest written to {args.out}")
    return 0


def cmd_run(args):
    if args.config:
        d = json.loads(Path(args.config).read_text(encoding="utf-8"))
        base = Path(args.config).parent
        for key in ("survey", "cell_table", "out_dir", "pre_manifest"):
            if d.get(key) and not Path(d[key]).is_absolute():
                d[key] = str(base / d[key])
    else:
        d = {}
    for key in ("survey", "cell_table", "out_dir", "method", "survey_id", "pre_manifest", "tolerance"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    if args.allow_unconverged:
        d["allow_unconverged"] = True
    if args.prereg:
        d["prereg"] = True
    sampler = dict(d.get("sampler", {}))
    for key in ("chains", "warmup", "samples", "target_accept", "max_tree_depth", "seed", "parametrization"):
        v = getattr(args, "s_" + key)
        if v is not None:
            sampler[key] = v
    sampler.setdefault("seed", default_seed())
    d["sampler"] = sampler
    if args.filter:
        d.setdefault("figure", {})["state_filter"] = args.filter
    if args.spec:
        d["spec"] = ModelSpec.from_json(Path(args.spec).read_text(encoding="utf-8")).to_dict()
    if args.schema:
        d["schema"] = SurveySchema.from_json(args.schema).to_dict()
    missing = [k for k in ("survey", "cell_table", "out_dir") if not d.get(k)]
    if missing:
        raise SystemExit(f"run: missing {', '.join(missing)} (flag or config)")
    config = PipelineConfig.from_dict(d)
    result = run_pipeline(config)
    print(f"run directory: {result.out_dir} (converged={result.converged})")
    return result.exit_code


def _sampler_flags(p, prefix=""):
    dest = (lambda k: "s_" + k) if prefix else (lambda k: k)
    p.add_argument("--chains", type=int, default=None if prefix else 4, dest=dest("chains"))
    p.add_argument("--warmup", type=int, default=None if prefix else 1000, dest=dest("warmup"))
    p.add_argument("--samples", type=int, default=None if prefix else 1000, dest=dest("samples"))
    p.add_argument("--target-accept", type=float, default=None if prefix else 0.8, dest=dest("target_accept"))
    p.add_argument("--max-tree-depth", type=int, default=None if prefix else 10, dest=dest("max_tree_depth"))
    p.add_argument("--seed", type=int, default=None, dest=dest("seed"))
    p.add_argument("--parametrization", choices=("auto", "noncentered", "centered"),
                   default=None if prefix else "auto", dest=dest("parametrization"))


def build_parser():
    parser = argparse.ArgumentParser(prog="mrp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file of defaults for this subcommand's flags")
        p.set_defaults(func=fn)
        return p

    p = add("ingest", cmd_ingest, "load and validate survey + cell table")
    p.add_argument("--survey", required=True)
    p.add_argument("--cell-table", required=True)
    p.add_argument("--schema")
    p.add_argument("--out")

    p = add("fit", cmd_fit, "fit the model (map, mmle or hmc)")
    p.add_argument("--survey", required=True)
    p.add_argument("--cell-table", required=True)
    p.add_argument("--schema")
    p.add_argument("--spec", help="ModelSpec JSON")
    p.add_argument("--method", choices=METHODS, default="hmc")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--allow-unconverged", action="store_true")
    _sampler_flags(p)

    p = add("poststratify", cmd_poststratify, "estimate series from a saved fit")
    p.add_argument("--fit", required=True, help="directory written by 'fit'")
    p.add_argument("--cell-table", required=True)
    p.add_argument("--survey", help="survey CSV for raw proportions")
    p.add_argument("--schema")
    p.add_argument("--survey-id")
    p.add_argument("--out", required=True)

    p = add("figure", cmd_figure, "state-grid SVG from an estimates CSV")
    p.add_argument("--estimates", required=True)
    p.add_argument("--cell-table", help="for ordering panels by the state predictor")
    p.add_argument("--filter", choices=sorted(STATE_FILTERS), default="all")
    p.add_argument("--slices", nargs="+", default=["all", "white"])
    p.add_argument("--order", choices=("state_predictor", "state"))
    p.add_argument("--title")
    p.add_argument("--out", required=True)

    p = add("simulate", cmd_simulate, "synthetic survey + cell table with known truth")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int)
    p.add_argument("--truth-seed", type=int, default=0)
    p.add_argument("--table-seed", type=int, default=0)
    p.add_argument("--bias-scale", type=float, default=0.0)
    p.add_argument("--spec")
    p.add_argument("--survey-id")
    p.add_argument("--out", required=True)

    p = add("compare", cmd_compare, "compare two estimates CSVs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--cell-table", help="population weights for pooled smoothness")
    p.add_argument("--out-json")
    p.add_argument("--out-csv")

    p = add("manifest", cmd_manifest, "write or verify a run manifest")
    p.add_argument("stage", choices=("pre", "post", "verify"))
    p.add_argument("--out", required=True, help="manifest path")
    p.add_argument("--config-file", action="append", metavar="NAME=PATH")
    p.add_argument("--data", action="append", metavar="NAME=PATH")
    p.add_argument("--output", action="append", metavar="NAME=PATH")
    p.add_argument("--pre", help="pre-stage manifest (post / verify)")
    p.add_argument("--statement")

    p = add("run", cmd_run, "full pipeline into a run directory")
    p.add_argument("--survey")
    p.add_argument("--cell-table")
    p.add_argument("--out-dir")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--spec")
    p.add_argument("--schema")
    p.add_argument("--survey-id")
    p.add_argument("--filter", choices=sorted(STATE_FILTERS))
    p.add_argument("--prereg", action="store_true")
    p.add_argument("--pre-manifest")
    p.add_argument("--allow-unconverged", action="store_true")
    _sampler_flags(p, prefix="s_")
    return parser


def _config_path(argv):
    for k, a in enumerate(argv):
        if a == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config_defaults(parser, argv):
    """Install JSON-file values as flag defaults, then parse (run reads its file itself)."""
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    command = next((a for a in argv if a in _subparsers(parser)), None)
    if path and command and command != "run":
        d = {k.replace("-", "_"): v for k, v in json.loads(Path(path).read_text(encoding="utf-8")).items()}
        sub = _subparsers(parser)[command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(d) - known)
        if unknown:
            parser.error(f"config keys not understood by '{command}': {unknown}")
        sub.set_defaults(**d)
        for a in sub._actions:
            if a.dest in d:
                a.required = False
    return parser.parse_args(argv)


def _subparsers(parser):
    return next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices


def main(argv=None):
    parser = build_parser()
    args = _apply_config_defaults(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return EXIT_ERROR
    except (ManifestError, ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

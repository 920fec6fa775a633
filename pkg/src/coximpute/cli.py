"""Command-line interface.

    coximpute fit       calibrate approach 1 fits and the pooled 2A/2B models
    coximpute predict   survival probabilities for new, possibly incomplete rows
    coximpute crossval  cross-validated predictions plus their assessment report
    coximpute simulate  scenario studies on simulated cohorts
    coximpute assess    assessment report for an existing predictions file

Exit codes: 0 success, 1 domain error (bad data, failed fit, ...), 2 usage
error. A ``--config`` JSON file (or a previous manifest) overrides flags;
the worker count defaults to the COXIMPUTE_WORKERS environment variable.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from . import __version__, seeding
from .assessment import AssessmentReport, assess_replicates
from .config import RunConfig, merge, read_config_file, workers_from_env
from .errors import CoxImputeError, ParameterError
from .io import (
    Manifest,
    canonical_json,
    file_digest,
    load_csv,
    load_predictors,
    load_schema,
    model_to_dict,
    read_predictions,
    write_predictions,
    write_report,
)
from .pipelines import METHODS, PredictionSet, approach2_both, calibrate, run_approach1, run_methods
from .simulation import MECHANISMS, SCENARIOS, ScenarioConfig, simulate_all, summarize

log = logging.getLogger("coximpute")

SAMPLE = "sample_cohort.csv"
SAMPLE_SCHEMA = "sample_cohort.schema.json"
BUNDLED = "bundled:"


class UsageError(Exception):
    pass


def _bundled(name) -> Path:
    return Path(str(resources.files("coximpute").joinpath("data", name)))


def _resolve(path):
    if path is None:
        return None
    if str(path).startswith(BUNDLED):
        return _bundled(str(path)[len(BUNDLED):])
    return Path(path)


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_flags(p, *, input_required=False):
    p.add_argument("--input", help="calibration CSV (default: bundled simulated sample)", required=input_required)
    p.add_argument("--schema", help="column schema JSON (default: time/status + continuous columns)")
    p.add_argument("--methods", nargs="+", choices=METHODS, help="methods to run")
    p.add_argument("-K", "--K", type=int, dest="K", help="number of imputations")
    p.add_argument("-L", "--L", type=int, dest="L", help="number of cross-validation folds")
    p.add_argument("--replicates", type=int, help="repeated analyses with independent seeds")
    p.add_argument("--horizons", nargs="+", type=float, help="prediction horizons (time units of the data)")
    p.add_argument("--combine", choices=("mean", "median", "logit-mean"), help="combination rule")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--cycles", type=int, help="chained-equation cycles per imputation")
    p.add_argument("--output", "-o", help="output directory")
    p.add_argument("--config", help="JSON config file or manifest; its values override flags")
    p.add_argument("--workers", type=int, help="worker processes (default: $COXIMPUTE_WORKERS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coximpute", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"coximpute {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="calibrate per-imputation fits and pooled models")
    _add_run_flags(p)

    p = sub.add_parser("predict", parents=[common], help="predict for new rows from a calibration sample")
    _add_run_flags(p)
    p.add_argument("--newdata", help="CSV of rows to predict (predictor columns, NA allowed)")

    p = sub.add_parser("crossval", parents=[common], help="cross-validated predictions and assessment")
    _add_run_flags(p)

    p = sub.add_parser("assess", parents=[common], help="assess a predictions file against observed outcomes")
    _add_run_flags(p)
    p.add_argument("--predictions", help="predictions CSV written by crossval")

    p = sub.add_parser("simulate", parents=[common], help="run simulated scenario studies")
    p.add_argument("--scenario", required=False, help="scenario id 1-4 or 'all'")
    p.add_argument("--mechanism", type=str.upper, choices=MECHANISMS + ("ALL",), default=None,
                   help="missingness mechanism (mcar, mar or all)")
    p.add_argument("--desk", action="store_true", help="laptop-scale preset (n=500, S=20, R=5, K=10)")
    p.add_argument("--n", type=int, dest="n", help="subjects per simulated dataset")
    p.add_argument("--S", type=int, dest="S", help="simulated datasets")
    p.add_argument("--R", type=int, dest="R", help="replicate analyses per dataset")
    p.add_argument("-K", "--K", type=int, nargs="+", dest="K", help="imputation counts")
    p.add_argument("-L", "--L", type=int, dest="L", help="cross-validation folds")
    p.add_argument("--methods", nargs="+", choices=METHODS)
    p.add_argument("--horizons", nargs="+", type=float, help="horizons in months")
    p.add_argument("--cycles", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--truth-filter", choices=("quantile", "value"), dest="truth_filter",
                   help="window on true survival for R: 20th-80th percentiles or fixed 0.2-0.8")
    p.add_argument("--output", "-o")
    p.add_argument("--config")
    p.add_argument("--workers", type=int)
    return parser


def _merge_config(given: dict, path, allowed: set) -> dict:
    try:
        return merge(given, read_config_file(path), allowed)
    except (ParameterError, json.JSONDecodeError) as err:
        raise UsageError(f"config {path}: {err}") from None


def _run_config(args) -> RunConfig:
    given = {k: getattr(args, k) for k in RunConfig.field_names() if getattr(args, k, None) is not None}
    if args.config:
        given = _merge_config(given, args.config, RunConfig.field_names())
    try:
        return RunConfig(**given)
    except (ParameterError, TypeError) as err:
        raise UsageError(str(err)) from None


def _workers(args) -> int:
    try:
        workers = args.workers if args.workers is not None else workers_from_env()
    except ParameterError as err:
        raise UsageError(str(err)) from None
    if workers < 1:
        raise UsageError("--workers must be at least 1")
    return workers


def _load(cfg: RunConfig):
    path = _resolve(cfg.input or BUNDLED + SAMPLE)
    schema = cfg.schema if cfg.schema is not None else (BUNDLED + SAMPLE_SCHEMA if cfg.input is None else None)
    specs = load_schema(_resolve(schema)) if schema else None
    return load_csv(path, specs)


def _finish(out: Path, command: str, config: dict, seeds: dict, files) -> None:
    config = {k: v for k, v in config.items() if k != "output"}  # where files go is not part of the run
    manifest = Manifest(command, config, seeds, {Path(f).name: file_digest(f) for f in files}, __version__)
    manifest.write(out)
    log.info("wrote %s and manifest.json to %s", ", ".join(Path(f).name for f in files), out)


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    cfg = _run_config(args)
    data, _ = _load(cfg)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    fits, pooled, spec = calibrate(data, K=cfg.K, seed=cfg.seed, cycles=cfg.cycles)
    model = {"design": spec.to_dict(), "approach1": [model_to_dict(f) for f in fits],
             "approach2A": model_to_dict(pooled["2A"]), "approach2B": model_to_dict(pooled["2B"])}
    path = out / "model.json"
    path.write_text(canonical_json(model))
    _finish(out, "fit", cfg.to_dict(), {"master": cfg.seed,
                                        "imputation": seeding.describe(seeding.derive(cfg.seed, seeding.IMPUTE, 0))},
            [path])
    return 0


def cmd_predict(args) -> int:
    cfg = _run_config(args)
    if not cfg.newdata:
        raise UsageError("predict needs --newdata")
    bad = [m for m in cfg.methods if m.startswith("nv")]
    if bad:
        raise UsageError(f"naive methods {bad} only apply to cross-validation")
    data, specs = _load(cfg)
    X, mask = load_predictors(_resolve(cfg.newdata), specs)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    sets = {}
    kw = dict(K=cfg.K, validation=(X, mask), seed=cfg.seed, cycles=cfg.cycles, combine=cfg.combine)
    if "ap1" in cfg.methods:
        sets[("ap1", 0)] = run_approach1(data, cfg.horizons, **kw)
    if {"ap2A", "ap2B"} & set(cfg.methods):
        for v, ps in approach2_both(data, cfg.horizons, **kw).items():
            if "ap" + v in cfg.methods:
                sets[("ap" + v, 0)] = ps
    sets = {(m, 0): sets[(m, 0)] for m in cfg.methods}
    path = write_predictions(out / "predictions.csv", sets)
    _finish(out, "predict", cfg.to_dict(), {"master": cfg.seed}, [path])
    return 0


def _replicate(task):
    data, cfg, r = task
    seed = seeding.derive(cfg.seed, seeding.REPLICATE, r)
    t0 = time.perf_counter()
    out = run_methods(data, cfg.horizons, cfg.methods, K=cfg.K, L=cfg.L, seed=seed, cycles=cfg.cycles,
                      combine=cfg.combine)
    log.info("replicate %d finished in %.1f s", r, time.perf_counter() - t0)
    return out


def _map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _assess(data, cfg_methods, sets: dict, K_of) -> AssessmentReport:
    report = AssessmentReport()
    for m in cfg_methods:
        reps = [ps for (method, _), ps in sorted(sets.items(), key=lambda kv: kv[0][1]) if method == m]
        report.extend(assess_replicates(reps, data.time, data.status, method=m, K=K_of(reps)))
    return report


def cmd_crossval(args) -> int:
    cfg = _run_config(args)
    if cfg.L < 2:
        raise UsageError("cross-validation needs L >= 2")
    data, _ = _load(cfg)
    if cfg.L > data.n:
        raise UsageError(f"L={cfg.L} exceeds the number of subjects ({data.n})")
    workers = _workers(args)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    results = _map(_replicate, [(data, cfg, r) for r in range(cfg.replicates)], workers)
    sets = {(m, r): res[m] for r, res in enumerate(results) for m in cfg.methods}
    report = _assess(data, cfg.methods, sets, lambda reps: cfg.K)
    report.meta = {"command": "crossval", "n": data.n}
    files = write_report(report, out)
    files.append(write_predictions(out / "predictions.csv", sets))
    seeds = {"master": cfg.seed,
             "replicates": [seeding.describe(seeding.derive(cfg.seed, seeding.REPLICATE, r))
                            for r in range(cfg.replicates)]}
    _finish(out, "crossval", cfg.to_dict(), seeds, files)
    return 0


def cmd_assess(args) -> int:
    cfg = _run_config(args)
    if not cfg.predictions:
        raise UsageError("assess needs --predictions")
    data, _ = _load(cfg)
    raw = read_predictions(_resolve(cfg.predictions))
    sets = {}
    for key, (horizons, arr) in raw.items():
        if arr.shape[1] != data.n:
            raise ParameterError(f"predictions for {key} cover {arr.shape[1]} subjects, data has {data.n}")
        sets[key] = PredictionSet(horizons, arr, data.row_has_missing, cfg.combine, key[0])
    methods = [m for m in METHODS if any(k[0] == m for k in sets)]
    report = _assess(data, methods, sets, lambda reps: reps[0].K)
    report.meta = {"command": "assess", "n": data.n}
    out = Path(cfg.output)
    files = write_report(report, out)
    _finish(out, "assess", cfg.to_dict(), {}, files)
    return 0


SIM_KEYS = {"scenario", "mechanism", "desk", "truth_filter", "cells"}


def _scenario_cells(args):
    settings = {k: getattr(args, k) for k in ("scenario", "mechanism", "truth_filter", "n", "S", "R", "K", "L",
                                              "methods", "horizons", "cycles", "seed")
                if getattr(args, k, None) is not None}
    settings["desk"] = bool(args.desk)
    if args.config:
        allowed = SIM_KEYS | {f.name for f in dataclasses.fields(ScenarioConfig)}
        settings = _merge_config(settings, args.config, allowed)
    truth_filter = settings.pop("truth_filter", "quantile")
    if "cells" in settings:
        return [ScenarioConfig.from_dict(c) for c in settings["cells"]], truth_filter
    scenario = str(settings.pop("scenario", "") or "")
    if not scenario:
        raise UsageError("simulate needs --scenario (1-4 or all)")
    if scenario.lower() == "all":
        ids = sorted(SCENARIOS)
    elif scenario.isdigit() and int(scenario) in SCENARIOS:
        ids = [int(scenario)]
    else:
        raise UsageError(f"unknown scenario {scenario!r}; expected 1-4 or all")
    mechanism = str(settings.pop("mechanism", "MCAR")).upper()
    if mechanism not in MECHANISMS + ("ALL",):
        raise UsageError(f"unknown mechanism {mechanism!r}")
    mechanisms = MECHANISMS if mechanism == "ALL" else (mechanism,)
    desk = settings.pop("desk", False)
    make = ScenarioConfig.desk if desk else ScenarioConfig.scenario
    try:
        return [make(i, m, **settings) for i in ids for m in mechanisms], truth_filter
    except (ParameterError, TypeError) as err:
        raise UsageError(str(err)) from None


def cmd_simulate(args) -> int:
    cells, truth_filter = _scenario_cells(args)
    workers = _workers(args)
    out = Path(args.output or "coximpute-sim")
    out.mkdir(parents=True, exist_ok=True)
    files, seeds = [], {}
    for cfg in cells:
        stem = f"scenario{cfg.scenario_id}_{cfg.mechanism.lower()}"
        t0 = time.perf_counter()
        results = simulate_all(cfg, workers)
        report = summarize(cfg, results, truth_filter)
        log.info("%s: %d simulations in %.1f s", stem, cfg.S, time.perf_counter() - t0)
        files.extend(write_report(report, out, stem))
        seeds[stem] = {"master": cfg.seed,
                       "simulations": [seeding.describe(seeding.derive(cfg.seed, s)) for s in range(cfg.S)]}
    config = {"cells": [c.to_dict() for c in cells], "truth_filter": truth_filter}
    _finish(out, "simulate", config, seeds, files)
    return 0


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "crossval": cmd_crossval, "assess": cmd_assess,
            "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="coximpute: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"coximpute {args.command}: error: {err}", file=sys.stderr)
        return 2
    except CoxImputeError as err:
        print(f"coximpute {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"coximpute {args.command}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""``fairglmm`` command line: simulate, fit, evaluate and sensitivity.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .data_model import DataError, Dataset, FitConfig
from .estimators import ESTIMATORS, fit_estimator
from .glmm_boost import BoostingError, FitTrace
from .ingest import RawTable, bank_schema, encode, load_csv, load_schema, prepare_bank
from .lr_solvers import NumericalError
from .metrics import MetricError, accuracy, confusion, disparate_impact, predict_dataset
from .model_io import ModelFile, read_model, write_model
from .sensitivity import shadow_price_study, write_sensitivity_csv
from .simgen import SCENARIOS, run_replications, summarize, write_outputs

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

logger = logging.getLogger("fairglmm")


class UsageError(Exception):
    pass


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    d = FitConfig()
    g = p.add_argument_group("model hyperparameters")
    g.add_argument("--lam", type=float, default=d.lam, help="random-effect ridge weight")
    g.add_argument("--rho", type=float, default=d.rho, help="fairness penalty weight")
    g.add_argument("--c", type=float, default=d.c, help="covariance threshold")
    g.add_argument("--q0", type=float, default=d.q0, help="initial random-intercept variance")
    g.add_argument("--l-max", type=int, default=d.l_max, help="maximum boosting iterations")
    g.add_argument("--q-tol", type=float, default=d.q_tol, help="variance convergence tolerance")
    g.add_argument(
        "--rho-scale", choices=("hessian", "objective"), default=d.boost_rho_scale,
        help="how rho enters the boosting steps",
    )
    g.add_argument("--seed", type=int, default=0, help="random seed")


def _add_data_options(p: argparse.ArgumentParser, need_schema: bool = True) -> None:
    p.add_argument("--data", required=True, help="CSV file (';' or ',' delimited)")
    src = p.add_mutually_exclusive_group(required=need_schema)
    src.add_argument("--schema", help="column role file")
    src.add_argument("--bank", action="store_true", help="use the built-in bank-marketing schema")
    p.add_argument("--strata-bins", type=int, default=None, help="override the stratum bin count")
    p.add_argument(
        "--no-sensitive-covariate", action="store_true",
        help="keep sensitive columns out of the design matrix",
    )


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="fairglmm",
        description="Fair logistic regression and fair GLMMs for stratified data.",
        epilog="Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.",
        formatter_class=fmt,
    )
    parser.add_argument("--log-level", default="WARNING", help="logging level")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a synthetic scenario", formatter_class=fmt)
    sim.add_argument("--scenario", choices=sorted(SCENARIOS), required=True)
    sim.add_argument("--reps", type=int, default=100, help="number of replications")
    sim.add_argument("--out", default="results", help="output directory")
    sim.add_argument("--estimators", default=",".join(ESTIMATORS), help="comma-separated list")
    sim.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel replications")
    sim.add_argument("--n-strata", type=int, default=None, help="override strata count")
    sim.add_argument("--stratum-size", type=int, default=None, help="override rows per stratum")
    sim.add_argument("--b-variance", type=float, default=None, help="override random-intercept variance")
    _add_fit_options(sim)
    sim.set_defaults(handler=cmd_simulate)

    fit = sub.add_parser("fit", help="fit an estimator on CSV data", formatter_class=fmt)
    _add_data_options(fit)
    fit.add_argument("--estimator", choices=ESTIMATORS, required=True)
    fit.add_argument("--out", required=True, help="model file to write")
    fit.add_argument("--trace", default=None, help="trace CSV for GLMM fits; None writes <out>.trace.csv")
    _add_fit_options(fit)
    fit.set_defaults(handler=cmd_fit)

    ev = sub.add_parser("evaluate", help="score a model file on CSV data", formatter_class=fmt)
    ev.add_argument("--model", required=True, help="model file from 'fit'")
    ev.add_argument("--data", required=True, help="CSV file with the training columns")
    ev.add_argument("--predictions", default=None, help="optional per-row prediction CSV")
    ev.set_defaults(handler=cmd_evaluate)

    sens = sub.add_parser("sensitivity", help="shadow prices of fairness constraints", formatter_class=fmt)
    _add_data_options(sens)
    sens.add_argument(
        "--set", dest="sets", action="append", required=True,
        help="comma-separated sensitive features forming one set; repeatable",
    )
    sens.add_argument("--model", choices=("lr", "crlr"), default="lr", help="fair model to fit")
    sens.add_argument("--train-fraction", type=float, default=1.0, help="share of rows used for fitting")
    sens.add_argument("--out", required=True, help="CSV file to write")
    _add_fit_options(sens)
    sens.set_defaults(handler=cmd_sensitivity)
    return parser


def _config(args, **extra) -> FitConfig:
    try:
        return FitConfig(
            lam=args.lam, rho=args.rho, c=args.c, q0=args.q0, l_max=args.l_max, q_tol=args.q_tol,
            boost_rho_scale=args.rho_scale, seed=args.seed, **extra,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _estimator_list(text: str) -> list[str]:
    names = [n.strip() for n in text.split(",") if n.strip()]
    bad = [n for n in names if n not in ESTIMATORS]
    if bad or not names:
        raise UsageError(f"unknown estimator(s) {', '.join(bad) or '(none)'}; choose from {', '.join(ESTIMATORS)}")
    return names


def cmd_simulate(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    estimators = _estimator_list(args.estimators)
    overrides = {
        k: v for k, v in (
            ("n_strata", args.n_strata), ("stratum_size", args.stratum_size), ("b_variance", args.b_variance)
        ) if v is not None
    }
    try:
        spec = replace(SCENARIOS[args.scenario], seed=args.seed, lam=args.lam, rho=args.rho, c=args.c, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    config = _config(args)
    reports = run_replications(spec, args.reps, config, estimators, jobs=args.jobs)
    rows = summarize(reports)
    paths = write_outputs(reports, rows, args.out, title=args.scenario)
    for row in rows:
        print(f"{row.estimator:10s} {row.metric} mean {row.mean:.4f} std {row.std:.4f}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def _schema(args, sensitive=("housing",)):
    if args.bank:
        return bank_schema(args.strata_bins or 10, sensitive)
    schema = load_schema(args.schema)
    if args.strata_bins is not None:
        for spec in schema:
            if spec.role == "stratum_source":
                spec.bins = args.strata_bins
    return schema


def _load_dataset(args, schema) -> tuple[Dataset, list]:
    table = load_csv(args.data, schema)
    return encode(table, schema, sensitive_as_covariate=not args.no_sensitive_covariate)


def write_trace_csv(trace: FitTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "selected", "bic", "q", "hat_trace"])
        for it in range(trace.iterations + 1):
            selected = trace.selected[it - 1] if it else ""
            bic = repr(float(np.min(trace.bic[it - 1]))) if it and it <= len(trace.bic) else ""
            q = trace.q_history[it] if it < len(trace.q_history) else float("nan")
            h = trace.hat_trace[it] if it < len(trace.hat_trace) else float("nan")
            w.writerow([it, selected, bic, repr(float(q)), repr(float(h))])


def cmd_fit(args) -> int:
    config = _config(args, include_sensitive_as_covariate=not args.no_sensitive_covariate)
    schema = _schema(args)
    data, stats = _load_dataset(args, schema)
    result = fit_estimator(args.estimator, data, config)
    meta = {
        "n_rows": str(data.n_rows),
        "converged": str(result.converged),
        "seed": str(args.seed),
        "sensitive_covariate": "0" if args.no_sensitive_covariate else "1",
    }
    if result.report is not None:
        r = result.report
        meta.update(iterations=str(r.iterations), grad_norm=repr(r.final_grad_norm),
                    constraint=repr(r.constraint_value))
        print(f"converged {r.converged}  iterations {r.iterations}  grad norm {r.final_grad_norm:.3g}  "
              f"covariance {r.constraint_value:.4g}")
        if r.separable:
            print("warning: data look separable; coefficients may be unreliable")
    if result.trace is not None:
        t = result.trace
        meta.update(iterations=str(t.iterations), message=t.message)
        trace_path = args.trace or f"{args.out}.trace.csv"
        write_trace_csv(t, trace_path)
        print(f"converged {t.converged}  iterations {t.iterations}  Q {result.params.q:.4g}")
        if t.message:
            print(t.message)
        print(f"wrote {trace_path}")
    model = ModelFile(args.estimator, result.params, list(data.feature_names), data.stratum_ids, meta, stats)
    write_model(model, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = read_model(args.model)
    if model.encoding is None:
        raise DataError("model file has no encoding record")
    cov = model.meta.get("sensitive_covariate", "1") == "1"
    data, _ = encode(load_csv(args.data, model.encoding), model.encoding, model.encoding,
                     sensitive_as_covariate=cov)
    if list(data.feature_names) != model.feature_names:
        raise DataError("encoded columns do not match the model's features")
    pred = predict_dataset(model.params, data, model.stratum_ids)
    conf = confusion(pred, data.labels)
    print(f"accuracy {accuracy(conf):.6f}")
    print(f"disparate_impact {disparate_impact(pred, data.sensitive):.6f}")
    print(f"tp {conf.tp} tn {conf.tn} fp {conf.fp} fn {conf.fn}")
    if args.predictions:
        with open(args.predictions, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "prediction", "label"])
            for row, (yh, y) in enumerate(zip(data.unpermute(pred), data.unpermute(data.labels))):
                w.writerow([row, int(yh), int(y)])
    return EXIT_OK


def _split_table(table: RawTable, fraction: float, seed: int) -> tuple[RawTable, RawTable | None]:
    if fraction >= 1.0:
        return table, None
    perm = np.random.default_rng(seed).permutation(table.n_rows)
    k = int(round(fraction * table.n_rows))
    return table.take(np.sort(perm[:k])), table.take(np.sort(perm[k:]))


def cmd_sensitivity(args) -> int:
    sets = [[n.strip() for n in s.split(",")] for s in args.sets]
    if any(not n for s in sets for n in s):
        raise UsageError("empty feature name in --set")
    if not 0.0 < args.train_fraction <= 1.0:
        raise UsageError("--train-fraction must lie in (0, 1]")
    wanted = list(dict.fromkeys(n for s in sets for n in s))
    schema = _schema(args, sensitive=wanted)
    declared = {s.name for s in schema if s.role == "sensitive"}
    unknown = [n for n in wanted if n not in declared]
    if unknown:
        raise UsageError(f"not a sensitive column: {', '.join(unknown)}; declared: {', '.join(sorted(declared))}")
    config = _config(args, include_sensitive_as_covariate=not args.no_sensitive_covariate)
    if args.bank:
        bank = prepare_bank(args.data, config, n_bins=args.strata_bins or 10, sensitive=wanted,
                            train_fraction=args.train_fraction)
        if args.train_fraction < 1.0:
            train, test = bank.split(args.seed)
        else:
            train, _ = encode(bank.table, bank.schema, strata=bank.strata,
                              sensitive_as_covariate=bank.sensitive_as_covariate)
            test = None
    else:
        table = load_csv(args.data, schema)
        train_table, test_table = _split_table(table, args.train_fraction, args.seed)
        cov = not args.no_sensitive_covariate
        train, stats = encode(train_table, schema, sensitive_as_covariate=cov)
        test = encode(test_table, schema, stats, sensitive_as_covariate=cov)[0] if test_table else None
    reports = shadow_price_study(train, sets, config, test=test, model=args.model)
    write_sensitivity_csv(reports, args.out)
    for rep in reports:
        zeta = "/".join(f"{z:.4g}" for z in rep.zeta)
        print(f"{'/'.join(rep.features):30s} zeta {zeta}  residual {rep.residual_norm:.3g}")
    singles = [(r.features[0], abs(float(r.zeta[0]))) for r in reports if len(r.features) == 1]
    if len(singles) > 1:
        order = sorted(singles, key=lambda t: -t[1])
        print("rank by |zeta|: " + " > ".join(name for name, _ in order))
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"fairglmm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, MetricError, FileNotFoundError, KeyError) as exc:
        print(f"fairglmm {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, BoostingError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"fairglmm {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

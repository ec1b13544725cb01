"""Command line front end.

Subcommands: fit, summarize, compare, simulate, ppc. All randomness flows
from --seed, outputs are byte-stable for a fixed seed, and files are written
atomically. Exit codes: 0 success, 1 usage error, 2 data error, 3
convergence failure under strict mode.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .core import ALPHA_SCHEDULES, PriorSpec, make_data
from .fitting import _atomic_write, fit_cpm, load_fit, save_fit, write_json
from .inference import elpd_diff, ppp_value, psis_loo
from .links import LinkFamily
from .sampler import SamplerConfig
from .simlab import StudyConfig, run_study

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CONVERGENCE = 3

RHAT_LIMIT = 1.01


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if not isinstance(v, str) else v for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _read_csv(path):
    if not os.path.exists(path):
        raise DataError(f"data file not found: {path}")
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"data file is empty: {path}") from None
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc}") from None
    if not rows:
        raise DataError(f"data file has a header but no rows: {path}")
    return [h.strip() for h in header], rows


def _numeric_column(header, rows, name, path):
    if name not in header:
        raise DataError(f"column {name!r} not found in {path} (columns: {', '.join(header)})")
    idx = header.index(name)
    out = np.empty(len(rows))
    for i, row in enumerate(rows):
        cell = row[idx].strip() if idx < len(row) else ""
        try:
            out[i] = float(cell)
        except ValueError:
            raise DataError(
                f"non-numeric value {cell!r} in column {name!r}, row {i + 2} of {path}"
            ) from None
    return out


# -- fit -----------------------------------------------------------------------


def _add_sampler_flags(p):
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--warmup", type=int, default=2000)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-tree-depth", type=int, default=10)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--init-jitter", type=float, default=0.1)


def cmd_fit(args) -> int:
    header, rows = _read_csv(args.data)
    y = _numeric_column(header, rows, args.outcome, args.data)
    cov_names = [c for c in (args.covariates.split(",") if args.covariates else []) if c]
    X = (np.column_stack([_numeric_column(header, rows, c, args.data) for c in cov_names])
         if cov_names else None)

    if args.alpha is not None:
        prior = PriorSpec(alpha=args.alpha, beta_sd=args.beta_sd)
    else:
        prior = PriorSpec(schedule_name=args.alpha_schedule, beta_sd=args.beta_sd)
    try:
        data = make_data(y, X, cov_names or None, detection_limit=args.detection_limit,
                         center=not args.no_center)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    config = SamplerConfig(chains=args.chains, warmup_iters=args.warmup,
                           sampling_iters=args.samples, seed=args.seed,
                           max_tree_depth=args.max_tree_depth,
                           target_accept=args.target_accept, init_jitter=args.init_jitter)
    fit = fit_cpm(data, args.link, prior, config)
    diag = fit.diagnostics()
    save_fit(fit, args.out, diag)
    max_rhat = diag.max_rhat()
    print(f"fit written to {args.out}: n={data.n} p={data.p} "
          f"J={data.encoding.n_categories} alpha={fit.alpha:.6g} max_rhat={max_rhat:.4f}")
    if not args.no_strict and (not np.isfinite(max_rhat) or max_rhat >= RHAT_LIMIT):
        print(f"convergence failure: max split R-hat {max_rhat:.4f} >= {RHAT_LIMIT} "
              "(rerun with more iterations or --no-strict)", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


# -- summarize -------------------------------------------------------------------


def cmd_summarize(args) -> int:
    fit = _load_fit_dir(args.fit_dir)
    level = args.level
    if not 0.0 < level < 1.0:
        raise UsageError("--level must lie in (0, 1)")
    at = None
    if args.at:
        at = np.array([float(v) for v in args.at.split(",")])
    elif fit.data.p:
        at = fit.data.covariate_means.copy()
    if fit.data.p and at.size != fit.data.p:
        raise UsageError(f"--at needs {fit.data.p} values, got {at.size}")
    x = at if at is not None else np.empty(0)

    rows = []
    if args.query == "cdf":
        s = fit.conditional_cdf(x, level)
        for k, yv in enumerate(s.values):
            rows.append(("cdf", yv, "", s.point[k], s.lower[k], s.upper[k], level))
    elif args.query == "mean":
        s = fit.conditional_mean(x, censored_value=args.censored_value, level=level)
        rows.append(("mean", "", "", s.point, s.lower, s.upper, level))
    elif args.query == "quantile":
        if not 0.0 < args.q < 1.0:
            raise UsageError("--q must lie in (0, 1)")
        s = fit.conditional_quantile(x, args.q, level)
        rows.append(("quantile", "", args.q, s.point, s.lower, s.upper, level))
    else:
        s = fit.transformation(level)
        for k, yv in enumerate(s.values):
            rows.append(("transformation", yv, "", s.point[k], s.lower[k], s.upper[k], level))

    out = args.out or os.path.join(args.fit_dir, "conditional.csv")
    _write_csv(out, ["quantity", "y_value", "q", "point", "lower", "upper", "level"], rows)
    print(f"{len(rows)} rows written to {out}")
    return EXIT_OK


def _load_fit_dir(path):
    if not os.path.isdir(path):
        raise DataError(f"fit directory not found: {path}")
    try:
        return load_fit(path)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load fit artifacts from {path}: {exc}") from None


def _require_censored_value(fit, censored_value):
    if fit.encoding.censored and censored_value is None:
        raise UsageError("fit has a censored lowest category; pass --censored-value")


# -- compare ---------------------------------------------------------------------


def cmd_compare(args) -> int:
    if len(args.fit_dirs) < 2:
        raise UsageError("compare needs at least two fit directories")
    fits = [(d, _load_fit_dir(d)) for d in args.fit_dirs]
    base = fits[0][1]
    for d, fit in fits[1:]:
        same = (fit.data.n == base.data.n
                and np.array_equal(fit.encoding.ranks, base.encoding.ranks)
                and np.array_equal(fit.encoding.unique_values, base.encoding.unique_values))
        if not same:
            raise DataError(f"fit {d} was not computed on the same dataset as {args.fit_dirs[0]}")
    loos = [(d, psis_loo(fit.pointwise_loglik())) for d, fit in fits]
    loos.sort(key=lambda t: t[1].elpd, reverse=True)
    best = loos[0][1]
    rows = []
    for d, loo in loos:
        diff, se = elpd_diff(loo, best)
        rows.append((os.path.basename(os.path.normpath(d)) or d, diff, se, loo.elpd, loo.se,
                     int(np.sum(loo.pareto_k > 0.7))))
    out = args.out or "elpd_table.csv"
    _write_csv(out, ["model", "elpd_diff", "se_diff", "elpd", "se", "n_pareto_k_high"], rows)
    print(f"{len(rows)} models ranked in {out}")
    return EXIT_OK


# -- simulate --------------------------------------------------------------------


def cmd_simulate(args) -> int:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read study config {args.config}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed study config {args.config}: {exc}") from None
    try:
        study = StudyConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid study config: {exc}") from None

    os.makedirs(args.out, exist_ok=True)
    reports, estimates = run_study(study, workers=args.workers)

    bias_rows = []
    for rep in reports:
        s = rep.spec
        for row in rep.rows:
            bias_rows.append((s.id, s.n, int(s.censored), s.alpha_schedule, s.link,
                              row["quantity"], row["truth"], row["avg_percent_bias"],
                              row["avg_abs_bias"], row["flag"], rep.rep_count,
                              rep.failed_reps))
    _write_csv(os.path.join(args.out, "bias_report.csv"),
               ["scenario", "n", "censored", "alpha_schedule", "link", "quantity", "truth",
                "avg_percent_bias", "avg_abs_bias", "flag", "rep_count", "failed_reps"],
               bias_rows)
    _write_csv(os.path.join(args.out, "estimates.csv"),
               ["scenario", "n", "censored", "alpha_schedule", "rep", "quantity", "estimate",
                "truth", "note"],
               [(r["scenario"], r["n"], int(r["censored"]), r["alpha_schedule"], r["rep"],
                 r["quantity"], r["estimate"], r["truth"], r["note"]) for r in estimates])
    manifest = {
        "version": __version__,
        "grid": {
            "scenarios": list(study.scenarios),
            "sample_sizes": list(study.sample_sizes),
            "alpha_schedules": list(study.alpha_schedules),
            "censoring": list(study.censoring),
        },
        "reps": study.reps,
        "seed": study.seed,
        "mcmc": {"chains": study.chains, "warmup_iters": study.warmup_iters,
                 "sampling_iters": study.sampling_iters,
                 "max_tree_depth": study.max_tree_depth,
                 "target_accept": study.target_accept},
        "n_cells": len(reports),
        "cells": [{"scenario": r.spec.id, "n": r.spec.n, "censored": r.spec.censored,
                   "alpha_schedule": r.spec.alpha_schedule, "link": r.spec.link,
                   "rep_count": r.rep_count, "failed_reps": r.failed_reps}
                  for r in reports],
        "files": ["bias_report.csv", "estimates.csv", "manifest.json"],
    }
    write_json(os.path.join(args.out, "manifest.json"), manifest)
    print(f"{len(reports)} cells written to {args.out}")
    return EXIT_OK


# -- ppc -------------------------------------------------------------------------


def cmd_ppc(args) -> int:
    fit = _load_fit_dir(args.fit_dir)
    if args.replicates > fit.draws.n_draws:
        raise UsageError(
            f"--replicates {args.replicates} exceeds retained draws {fit.draws.n_draws}")
    reps = fit.posterior_predictive(args.replicates, seed=args.seed)

    enc = fit.encoding
    observed = enc.unique_values[enc.ranks - 1]
    header = ["observed"] + [f"rep_{r + 1}" for r in range(args.replicates)]
    rows = [tuple([observed[i]] + [reps[r, i] for r in range(args.replicates)])
            for i in range(fit.data.n)]
    out_dir = args.out or args.fit_dir
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "ppc_draws.csv"), header, rows)

    ppp = {
        "replicates": args.replicates,
        "seed": args.seed,
        "variance": ppp_value("variance", reps, observed, enc),
        "skewness": ppp_value("skewness", reps, observed, enc),
    }
    if enc.censored:
        ppp["proportion_censored"] = ppp_value("proportion_censored", reps, observed, enc)
    else:
        ppp["note"] = "proportion_censored omitted: fit has no detection limit"
    write_json(os.path.join(out_dir, "ppp.json"), ppp)
    print(f"ppc outputs written to {out_dir}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="ordcpm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model from a CSV file")
    p.add_argument("--data", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--covariates", default="", help="comma-separated column names")
    p.add_argument("--link", choices=LinkFamily.kinds, default="logit")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--alpha", type=float)
    g.add_argument("--alpha-schedule", choices=ALPHA_SCHEDULES, default="inverse_J")
    p.add_argument("--beta-sd", type=float, default=None)
    p.add_argument("--detection-limit", type=float, default=None)
    p.add_argument("--no-center", action="store_true")
    _add_sampler_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--no-strict", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="conditional summaries from a fit directory")
    p.add_argument("fit_dir")
    p.add_argument("--query", choices=("cdf", "mean", "quantile", "transformation"),
                   required=True)
    p.add_argument("--at", default="", help="raw-scale covariate values, comma separated")
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--censored-value", type=float, default=None)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("compare", help="rank fits of the same data by PSIS-LOO ELPD")
    p.add_argument("fit_dirs", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", help="run a simulation study from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ppc", help="posterior predictive draws and p-values")
    p.add_argument("fit_dir")
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ppc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        code = args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``lcda fit | predict | evaluate | simulate``.

Exit codes: 0 success, 2 input error, 3 numerical or EM failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, fields
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .classify import (
    LcdaRecipe,
    LdaRecipe,
    QdaRecipe,
    evaluate_heldout,
    evaluate_loocv,
    fit_lcda,
    fit_lda,
    fit_qda,
    predict,
    ClassifierModel,
)
from .em import EMConfig
from .errors import DomainError, LcdaError, QdaInfeasible
from .init_select import bic, select_k
from .io import (
    InputFormatError,
    file_fingerprint,
    read_labeled_csv,
    read_model,
    read_query_csv,
    write_model,
)
from .simbench import EXPERIMENTS, NI_MODES, RESULT_COLUMNS, SimDesign, run_grid
from .stats import compute_class_stats

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
THREADS_ENV = "LCDA_THREADS"
METHODS = ("lcda", "lcda_adjusted", "lda", "qda")

log = logging.getLogger("lcda")


class UsageError(DomainError):
    pass


def parse_k_range(text: str) -> range:
    try:
        lo, hi = (int(t) for t in text.split(".."))
    except ValueError:
        raise UsageError(f"expected a range like 1..8, got {text!r}") from None
    if lo < 1 or hi < lo:
        raise UsageError(f"invalid K range {text!r}")
    return range(lo, hi + 1)


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, float):
        return "NA" if math.isnan(x) else repr(x)
    return str(x)


def _config(args, k: int = 1) -> EMConfig:
    return EMConfig(
        k=k,
        epsilon=args.epsilon,
        max_iter=args.max_iter,
        variant=args.variant,
        df_mode=args.df_mode,
        ridge=args.ridge,
        seed=args.seed,
    )


def _choose_k(dataset, args, out) -> tuple[int, Optional[object]]:
    """Fixed --k, or the BIC minimizer over --select-k (grid printed to ``out``)."""
    if args.k is not None:
        return args.k, None
    stats = compute_class_stats(dataset)
    ks = parse_k_range(args.select_k)
    if ks.stop - 1 > len(stats):
        print(f"warning: K grid capped at the number of classes ({len(stats)})", file=sys.stderr)
        ks = range(ks.start, max(ks.start, len(stats)) + 1)
    grid = select_k(stats, [s.count for s in stats], ks, _config(args))
    print("k,bic,loglik,n_iter,converged,error", file=out)
    for r in grid.records:
        ll = r.fit.loglik if r.fit else math.nan
        it = r.fit.n_iter if r.fit else ""
        conv = r.fit.converged if r.fit else ""
        print(f"{r.k},{_fmt(r.bic)},{_fmt(ll)},{it},{conv},{r.error}", file=out)
    print(f"selected_k={grid.selected_k}", file=out)
    return grid.selected_k, grid


# -- fit ------------------------------------------------------------------------


def cmd_fit(args) -> int:
    dataset = read_labeled_csv(args.data, args.group_mean)
    provenance = {
        "seed": args.seed,
        "data": file_fingerprint(args.data),
        "tool": f"lcda {__version__}",
    }
    if args.kind == "lda":
        model = fit_lda(dataset, args.ridge)
        provenance["config"] = {"ridge": args.ridge}
        print(f"kind=lda classes={dataset.n_classes} p={dataset.p}")
    elif args.kind == "qda":
        model = fit_qda(dataset)
        print(f"kind=qda classes={dataset.n_classes} p={dataset.p}")
    else:
        k, grid = _choose_k(dataset, args, sys.stdout)
        if grid is not None:
            fit = grid.fit
            stats = compute_class_stats(dataset)
            model = ClassifierModel(
                "lcda", dataset.class_ids, np.stack([s.mean for s in stats]), fit.params.covariances,
                tau=fit.tau, weights=fit.params.weights, adjusted_covariances=fit.adjusted_covariances,
                use_adjusted=args.use_adjusted, df_mode=fit.df_mode, fit=fit,
            )
        else:
            model = fit_lcda(dataset, k, _config(args, k), args.use_adjusted)
            fit = model.fit
            fit.bic = bic(fit, dataset.n_classes, dataset.p, k)
        provenance["config"] = asdict(_config(args, k))
        warn = "" if fit.converged else " (max_iter reached)"
        print(
            f"kind=lcda K={k} loglik={fit.loglik!r} bic={fit.bic!r} iterations={fit.n_iter} "
            f"converged={fit.converged}{warn} weights={np.round(fit.params.weights, 6).tolist()}"
        )
    if args.output:
        write_model(args.output, model, provenance)
        print(f"model written to {args.output}")
    return EXIT_OK


# -- predict --------------------------------------------------------------------


def cmd_predict(args) -> int:
    model = read_model(args.model)
    ids, Y = read_query_csv(args.queries, model.p)
    top = max(1, min(args.top, model.n_classes))
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["query_id", "predicted_class"] + [f"log_score_top{j + 1}" for j in range(top)])
        if Y.shape[0]:
            result = predict(model, Y)
            ranked = -np.sort(-result.scores, axis=1)[:, :top]
            for qid, cls, row in zip(ids, result.predicted, ranked):
                writer.writerow([qid, cls] + [repr(float(v)) for v in row])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# -- evaluate -------------------------------------------------------------------


def _recipes(methods, dataset, args, out):
    recipes = []
    k = None
    for method in methods:
        if method in ("lcda", "lcda_adjusted"):
            if k is None:
                k, _ = _choose_k(dataset, args, out)
            adjusted = method == "lcda_adjusted" or args.use_adjusted
            recipes.append(LcdaRecipe(k, _config(args, k), adjusted, args.refit, name=method))
        elif method == "lda":
            recipes.append(LdaRecipe(args.ridge))
        else:
            recipes.append(QdaRecipe())
    return recipes


def cmd_evaluate(args) -> int:
    dataset = read_labeled_csv(args.data, args.group_mean)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise UsageError(f"unknown methods {unknown}; choose from {METHODS}")
    recipes = _recipes(methods, dataset, args, sys.stderr)
    rows = [("record", "method", "key", "value")]
    for recipe in recipes:
        name = recipe.name
        try:
            if args.protocol == "loocv":
                res = evaluate_loocv(dataset, recipe)
                rows.append(("overall", name, "accuracy", _fmt(res.overall_accuracy)))
                rows.append(("skipped_folds", name, "count", str(res.skipped)))
                for rate, count in res.rate_histogram().items():
                    rows.append(("rate_histogram", name, repr(rate), str(count)))
                print(f"{name}: LOOCV accuracy {res.overall_accuracy:.4f}", file=sys.stderr)
            else:
                res = evaluate_heldout(dataset, args.g, args.repeats, recipe, args.seed)
                for r, acc in enumerate(res.accuracies):
                    rows.append(("repeat", name, str(r), _fmt(acc)))
                lo, hi = res.band
                rows.append(("overall", name, "accuracy", _fmt(res.mean)))
                rows.append(("band_lo", name, "accuracy", _fmt(lo)))
                rows.append(("band_hi", name, "accuracy", _fmt(hi)))
                print(f"{name}: held-out accuracy {res.mean:.4f} [{lo:.4f}, {hi:.4f}]", file=sys.stderr)
        except QdaInfeasible as exc:
            print(f"warning: {exc}", file=sys.stderr)
            rows.append(("overall", name, "accuracy", "NA"))
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        csv.writer(out, lineterminator="\n").writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# -- simulate -------------------------------------------------------------------


def _design_from_args(args) -> SimDesign:
    params = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                params = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"{args.config}: not valid JSON ({exc})") from None
        allowed = {f.name for f in fields(SimDesign)}
        extra = set(params) - allowed
        if extra:
            raise InputFormatError(f"unknown design keys {sorted(extra)}; allowed {sorted(allowed)}")
    flags = {
        "p": args.p, "k": args.k, "n": args.n, "ni": args.ni, "ni_mode": args.ni_mode, "reps": args.reps,
        "seed": args.seed, "hypercube_side": args.side, "k_max": args.k_max,
    }
    params.update({key: v for key, v in flags.items() if v is not None})
    if args.eig_range:
        params["eig_range"] = tuple(args.eig_range)
    if "eig_range" in params:
        params["eig_range"] = tuple(params["eig_range"])
    if params.get("ni") is not None and "ni_mode" not in params:
        params["ni_mode"] = "fixed"
    try:
        return SimDesign(**params)
    except TypeError as exc:
        raise InputFormatError(f"invalid design: {exc}") from None


def cmd_simulate(args) -> int:
    design = _design_from_args(args)
    jobs = args.jobs if args.jobs is not None else int(os.environ.get(THREADS_ENV, "1") or 1)
    rows = run_grid([design], [args.experiment], jobs=max(1, jobs))
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            d = asdict(row)
            writer.writerow([_fmt(d[c]) for c in RESULT_COLUMNS])
    finally:
        if out is not sys.stdout:
            out.close()
    errors = sum(bool(r.error) for r in rows)
    print(f"{len(rows)} trials, {errors} with errors", file=sys.stderr)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _add_em_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=None, help="number of latent covariances")
    p.add_argument("--select-k", default="1..6", metavar="LO..HI",
                   help="BIC grid used when --k is not given (default 1..6)")
    p.add_argument("--variant", choices=["normal", "wishart", "singular_wishart", "auto"], default="normal")
    p.add_argument("--df-mode", choices=["n", "n_minus_1"], default=None)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--use-adjusted", action="store_true", help="predict with bias-adjusted covariances")
    p.add_argument("--group-mean", default=None, metavar="COL",
                   help="average rows sharing class id and COL before fitting")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcda", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lcda {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a classifier and write a model file")
    fit.add_argument("data", help="labeled CSV: class_id,x1,...,xp")
    fit.add_argument("-o", "--output", help="model file (JSON)")
    fit.add_argument("--kind", choices=["lcda", "lda", "qda"], default="lcda")
    _add_em_flags(fit)
    fit.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="classify query rows with a model file")
    pred.add_argument("model")
    pred.add_argument("queries", help="CSV with p feature columns and an optional leading id column")
    pred.add_argument("-o", "--output")
    pred.add_argument("--top", type=int, default=1, help="number of top log scores to report")
    pred.set_defaults(func=cmd_predict)

    ev = sub.add_parser("evaluate", help="LOOCV or repeated held-out accuracy")
    ev.add_argument("data")
    ev.add_argument("-o", "--output")
    ev.add_argument("--protocol", choices=["loocv", "heldout"], default="loocv")
    ev.add_argument("--g", type=int, default=1, help="held-out observations per class")
    ev.add_argument("--repeats", type=int, default=10)
    ev.add_argument("--methods", default="lcda,lda,qda")
    ev.add_argument("--refit", choices=["per-fold", "none"], default="per-fold")
    _add_em_flags(ev)
    ev.set_defaults(func=cmd_evaluate)

    sim = sub.add_parser("simulate", help="run a simulation experiment and write the trial table")
    sim.add_argument("--experiment", choices=EXPERIMENTS, required=True)
    sim.add_argument("--config", help="JSON file with SimDesign keys")
    sim.add_argument("--p", type=int)
    sim.add_argument("--k", type=int)
    sim.add_argument("--n", type=int)
    sim.add_argument("--ni", type=int, help="fixed class size (implies --ni-mode fixed)")
    sim.add_argument("--ni-mode", choices=NI_MODES)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--side", type=float, help="hypercube side for class means")
    sim.add_argument("--eig-range", type=float, nargs=2, metavar=("LO", "HI"))
    sim.add_argument("--k-max", type=int, help="largest K in the BIC grid")
    sim.add_argument("--jobs", type=int, default=None, help=f"worker processes (default ${THREADS_ENV} or 1)")
    sim.add_argument("-o", "--output")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputFormatError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except LcdaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

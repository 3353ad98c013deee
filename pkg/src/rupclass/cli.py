"""Command-line interface: ``rupclass {fit,predict,select,simulate,bench}``.

Exit codes: 0 success, 2 usage error, 3 unreadable input, 4 infeasible
configuration, 5 degenerate fit.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .covariance import MODEL_NAMES, check_model
from .dataio import (
    DEFAULT_LABEL_COLUMN,
    DataParseError,
    fit_to_dict,
    fmt,
    read_artifact,
    read_dataset,
    write_artifact,
)
from .em import MODES, DegenerateFitError, FitError, InfeasibleConfigError, fit, predict
from .selection import DEFAULT_C_GRID, select
from .simulation import (
    DEFAULT_METHODS,
    STUDY1_ETAS,
    StudyIConfig,
    StudyIIConfig,
    default_jobs,
    gen_study1,
    gen_study2,
    parse_methods,
    run_benchmark,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INFEASIBLE = 4
EXIT_DEGENERATE = 5


class UsageError(Exception):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _c_value(text):
    value = float(text)
    if not value >= 1:
        raise argparse.ArgumentTypeError("c must be >= 1")
    return value


def _fmt_opt(x) -> str:
    return "NA" if x is None or not np.isfinite(x) else fmt(x)


def _emit(text: str, path) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _fit_options(ns) -> dict:
    return dict(mode=ns.mode, alpha_l=ns.alpha_labelled, alpha_u=ns.alpha_unlabelled, nsamp=ns.nsamp,
                max_iter=ns.max_iter, tol=ns.tol, seed=ns.seed, classify_trimmed=ns.classify_trimmed)


def _check_alphas(ns, data):
    for name, a in (("--alpha-labelled", ns.alpha_labelled), ("--alpha-unlabelled", ns.alpha_unlabelled)):
        if not 0 <= a < 1:
            raise InfeasibleConfigError(f"{name} must lie in [0, 1), got {a}")
    if ns.mode in ("redda", "rupclass"):
        N, p = data.X.shape
        G = len(data.class_names)
        keep = math.ceil(N * (1 - ns.alpha_labelled) - 1e-9)
        if keep < G * (p + 1):
            raise InfeasibleConfigError(
                f"--alpha-labelled {ns.alpha_labelled} keeps {keep} of {N} labelled units; "
                f"G*(p+1) = {G * (p + 1)} are needed")


def cmd_fit(ns) -> int:
    data = read_dataset(ns.input, ns.label_column)
    if data.X.shape[0] == 0:
        raise DataParseError("the data contain no labelled rows")
    _check_alphas(ns, data)
    f = fit(data.X, data.labels, data.Y, model=ns.model, c=ns.c, G=len(data.class_names), **_fit_options(ns))
    doc = fit_to_dict(f, data.class_names, data.features, __version__, seed=ns.seed, nsamp=ns.nsamp)
    if ns.output:
        write_artifact(ns.output, doc)
    G = len(data.class_names)
    kept_l = np.bincount(data.labels[f.mask.zeta], minlength=G)
    assigned_u = np.bincount(f.labels_unlabelled[f.labels_unlabelled >= 0], minlength=G)
    out = io.StringIO()
    out.write(f"mode {f.mode}  model {f.model}  c {_fmt_opt(f.c)}  "
              f"alpha_l {fmt(f.alpha_l)}  alpha_u {fmt(f.alpha_u)}\n")
    out.write(f"labelled: {int(f.mask.zeta.sum())} retained, {int((~f.mask.zeta).sum())} trimmed "
              f"of {data.X.shape[0]}\n")
    out.write(f"unlabelled: {int(f.mask.phi.sum())} retained, {int((~f.mask.phi).sum())} trimmed "
              f"of {data.Y.shape[0]}\n")
    out.write(f"iterations {f.iterations}  converged {'yes' if f.converged else 'no'}\n")
    out.write(f"trimmed log-likelihood {f.loglik:.10g}\n")
    out.write(f"RBIC {format(f.rbic, '.10g') if np.isfinite(f.rbic) else 'NA'}\n")
    out.write("class  tau  retained_labelled  assigned_unlabelled\n")
    for g, name in enumerate(data.class_names):
        out.write(f"{name}  {f.params.tau[g]:.6f}  {kept_l[g]}  {assigned_u[g]}\n")
    sys.stdout.write(out.getvalue())
    return EXIT_OK


def cmd_predict(ns) -> int:
    model = read_artifact(ns.model)
    data = read_dataset(ns.data, ns.label_column, class_names=model.class_names)
    if data.X.shape[1] != model.params.p:
        raise DataParseError(f"model has {model.params.p} features, data have {data.X.shape[1]}")

    pred, z, outlier = predict(_as_fit(model), data.data, classify_trimmed=ns.classify_trimmed,
                               labels=data.row_labels)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "predicted", "max_posterior", *[f"posterior_{n}" for n in model.class_names], "outlier"])
    for i in range(pred.shape[0]):
        label = model.class_names[pred[i]] if pred[i] >= 0 else "?"
        post = z[i]
        top = "NA" if np.isnan(post).any() else fmt(np.max(post))
        w.writerow([i + 1, label, top, *[("NA" if np.isnan(v) else fmt(v)) for v in post], int(outlier[i])])
    _emit(buf.getvalue(), ns.output)
    return EXIT_OK


def _as_fit(model):
    """Wrap a loaded artifact so that :func:`predict` applies its cutoffs."""
    from .em import ModelFit, TrimMask

    empty = np.zeros(0, dtype=bool)
    return ModelFit(params=model.params, mode=model.document["mode"], mask=TrimMask(empty, empty),
                    z=np.empty((0, model.params.G)), labels_unlabelled=np.empty(0, int),
                    labels_labelled=np.empty(0, int), loglik=float("nan"), loglik_trajectory=[], cycles=[],
                    rbic=float("nan"), iterations=0, converged=True, n_retained=0,
                    labelled_cutoff=model.labelled_cutoff, unlabelled_cutoff=model.unlabelled_cutoff)


def cmd_select(ns) -> int:
    data = read_dataset(ns.input, ns.label_column)
    if data.X.shape[0] == 0:
        raise DataParseError("the data contain no labelled rows")
    _check_alphas(ns, data)
    models = [check_model(m) for m in ns.models.split(",")] if ns.models else list(MODEL_NAMES)
    grid = [float(c) for c in ns.c_grid.split(",")] if ns.c_grid else list(DEFAULT_C_GRID)
    if any(c < 1 for c in grid):
        raise UsageError("every value in --c-grid must be >= 1")
    report = select(data.X, data.labels, data.Y, models=models, c_grid=grid, G=len(data.class_names),
                    **_fit_options(ns))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "model", "c", "rbic", "penalty", "loglik", "iterations", "converged", "winner", "note"])
    for rank, cand in enumerate(report.candidates, start=1):
        w.writerow([rank, cand.model, fmt(cand.c), _fmt_opt(cand.rbic), fmt(cand.penalty), _fmt_opt(cand.loglik),
                    cand.iterations, int(cand.converged), int(cand is report.winner), cand.error or ""])
    _emit(buf.getvalue(), ns.output)
    return EXIT_OK


def _dataset_csv(sim, class_names) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    p = sim.X.shape[1]
    w.writerow([*[f"x{j + 1}" for j in range(p)], "label", "true_class", "contaminated"])
    for x, lab, truth, cont in zip(sim.X, sim.labels, sim.true_labelled, sim.contaminated):
        w.writerow([*map(fmt, x), class_names[lab], class_names[truth] if truth >= 0 else "none", int(cont)])
    for y, truth in zip(sim.Y, sim.true_unlabelled):
        w.writerow([*map(fmt, y), "?", class_names[truth], 0])
    return buf.getvalue()


def cmd_simulate(ns) -> int:
    rng = np.random.default_rng(np.random.SeedSequence(ns.seed))
    try:
        if ns.study == 1:
            sim = gen_study1(StudyIConfig(N=ns.N or 200, M=ns.M or 400, eta=ns.eta, outliers=ns.outliers), rng)
        else:
            sim = gen_study2(StudyIIConfig(N=ns.N or 250, M=ns.M or 750, outliers=ns.outliers), rng)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    names = [str(g + 1) for g in range(sim.G)]
    _emit(_dataset_csv(sim, names), ns.output)
    return EXIT_OK


def _table(report) -> str:
    lines = []
    etas = report.etas
    head = "method".ljust(16) + "".join(f"{e:>16.2f}" for e in etas)
    lines.append(f"mean misclassification error (sd), B = {report.B}")
    lines.append(head)
    for spec in report.methods:
        cells = []
        for e in etas:
            r = report.cell(spec.name, e)
            cells.append(f"{r['mean']:.3f} ({r['sd']:.3f})".rjust(16) if np.isfinite(r["mean"]) else "NA".rjust(16))
        lines.append(spec.name.ljust(16) + "".join(cells))
    fails = [(r["method"], r["eta"], r["failures"]) for r in report.rows if r["metric"] == "error" and r["failures"]]
    for m, e, k in fails:
        lines.append(f"note: {m} at eta {e:.2f} failed on {k} of {report.B} replicates")
    return "\n".join(lines) + "\n"


def cmd_bench(ns) -> int:
    study = f"study{ns.study}"
    if ns.eta:
        etas = [float(e) for e in ns.eta.split(",")]
    else:
        etas = list(STUDY1_ETAS) if ns.study == 1 else [0.1]
    if ns.study == 1 and any(not 0 <= e <= 0.25 for e in etas):
        raise UsageError("--eta values must lie in [0, 0.25]")
    if ns.study == 2 and etas != [0.1]:
        raise UsageError("the second study runs at its fixed contamination level only")
    methods = ns.methods.split() if " " in ns.methods.strip() else ns.methods.split(";")
    try:
        specs = parse_methods([m for m in methods if m.strip()], study)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report = run_benchmark(study, specs, ns.B, ns.seed, etas=etas, nsamp=ns.nsamp, jobs=ns.jobs,
                           N=ns.N, M=ns.M, outliers=ns.outliers)
    text = _table(report)
    if ns.output:
        Path(ns.output).write_text(report.to_csv())
        figure = ns.figure or str(Path(ns.output).with_suffix(".png"))
        sys.stdout.write(text)
    else:
        sys.stdout.write(report.to_csv())
        sys.stderr.write(text)
        figure = ns.figure
    if figure:
        from .plotting import plot_error_curves

        plot_error_curves(report, figure)
    return EXIT_OK


def _add_fit_flags(p, with_c=True):
    p.add_argument("--label-column", default=DEFAULT_LABEL_COLUMN, help="name of the class label column")
    p.add_argument("--mode", choices=MODES, default="rupclass")
    if with_c:
        p.add_argument("--model", type=str.upper, choices=MODEL_NAMES, default="VVV")
        p.add_argument("--c", type=_c_value, default=20.0, help="eigenvalue-ratio bound (robust modes)")
    p.add_argument("--alpha-labelled", type=float, default=0.0)
    p.add_argument("--alpha-unlabelled", type=float, default=0.0)
    p.add_argument("--nsamp", type=_positive_int, default=50, help="robust initialisation restarts")
    p.add_argument("--max-iter", type=_positive_int, default=500)
    p.add_argument("--tol", type=float, default=1e-5, help="Aitken stopping tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classify-trimmed", action=argparse.BooleanOptionalAction, default=True,
                   help="also give trimmed units a class")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rupclass", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a classifier and save it")
    p.add_argument("input", help="CSV with a header; '?' marks unlabelled rows")
    p.add_argument("-o", "--output", help="model file to write (JSON)")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="classify rows with a saved model")
    p.add_argument("model", help="model file written by 'fit'")
    p.add_argument("data", help="CSV with the same feature columns")
    p.add_argument("-o", "--output", help="predictions CSV (default: standard output)")
    p.add_argument("--label-column", default=DEFAULT_LABEL_COLUMN)
    p.add_argument("--classify-trimmed", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("select", help="rank covariance models and c values by RBIC")
    p.add_argument("input")
    p.add_argument("-o", "--output", help="report CSV (default: standard output)")
    p.add_argument("--models", help="comma-separated model names (default: all 14)")
    p.add_argument("--c-grid", help="comma-separated c values (default: 4,20,100)")
    _add_fit_flags(p, with_c=False)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="write one simulated data set")
    p.add_argument("--study", type=int, choices=(1, 2), default=1)
    p.add_argument("--eta", type=float, default=0.0, help="contamination rate (study 1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--N", type=_positive_int, default=None, help="labelled units before contamination")
    p.add_argument("--M", type=_positive_int, default=None, help="unlabelled units")
    p.add_argument("--outliers", choices=("add", "replace"), default="add")
    p.add_argument("-o", "--output", help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="Monte Carlo benchmark over contamination levels")
    p.add_argument("--study", type=int, choices=(1, 2), default=1)
    p.add_argument("--eta", help="comma-separated contamination rates (default: the full grid)")
    p.add_argument("--B", type=_positive_int, default=100, help="replicates per level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", default=" ".join(DEFAULT_METHODS),
                   help="space-separated specs, e.g. 'EDDA REDDA:al=0.1,c=20,model=VVV'")
    p.add_argument("--nsamp", type=_positive_int, default=50)
    p.add_argument("--jobs", type=_positive_int, default=None, help="worker processes (default: $RUPCLASS_JOBS or 1)")
    p.add_argument("--N", type=_positive_int, default=None)
    p.add_argument("--M", type=_positive_int, default=None)
    p.add_argument("--outliers", choices=("add", "replace"), default="add")
    p.add_argument("-o", "--output", help="report CSV; a PNG figure is written next to it")
    p.add_argument("--figure", help="figure path (overrides the default next to --output)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if getattr(ns, "jobs", None) is None and ns.command == "bench":
        ns.jobs = default_jobs()
    try:
        return ns.func(ns)
    except UsageError as exc:
        print(f"rupclass {ns.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataParseError as exc:
        print(f"rupclass {ns.command}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleConfigError as exc:
        print(f"rupclass {ns.command}: infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DegenerateFitError, FitError, ArithmeticError) as exc:
        print(f"rupclass {ns.command}: fit failed: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ValueError as exc:
        print(f"rupclass {ns.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: fit, impute, cv, path, certify and synth."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import CertificateError, certify_global, qrpca_problem, qrpca_solve
from .data import DataError, DataTable, Real, read_csv, write_csv
from .fit import FitConfig, fit
from .initialization import initialize
from .losses import default_loss, make_loss
from .model import GlrmProblem, ModelFormatError, impute_table, load_model, save_model
from .regularizers import parse_reg
from .select import cross_validate, path_report, reg_path
from .synth import PRESETS, generate


class CliError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise CliError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise CliError(f"expected a comma-separated list of integers, got {text!r}") from None


def _column(table: DataTable, key: str) -> int:
    if key in table.names:
        return table.names.index(key)
    try:
        j = int(key)
    except ValueError:
        raise CliError(f"unknown column {key!r}") from None
    if not 0 <= j < table.n:
        raise CliError(f"column index {j} out of range 0..{table.n - 1}")
    return j


def _losses(table: DataTable, overrides):
    losses = [default_loss(k) for k in table.kinds]
    record = {}
    for item in overrides or []:
        col, sep, spec = item.partition("=")
        if not sep:
            raise CliError(f"--loss-override expects COL=NAME, got {item!r}")
        j = _column(table, col.strip())
        name, _, param = spec.strip().partition(":")
        losses[j] = make_loss(name, table.kinds[j], float(param) if param else None)
        record[table.names[j]] = spec.strip()
    return losses, record


def _problem(args, table: DataTable, k: int | None = None):
    losses, record = _losses(table, getattr(args, "loss_override", None))
    row_reg = parse_reg(args.reg, args.gamma)
    col_reg = parse_reg(args.col_reg, args.gamma) if args.col_reg else row_reg
    p = GlrmProblem(table, args.rank if k is None else k, losses, row_reg, col_reg,
                    offset=not args.no_offset, scaling=not args.no_scaling)
    return p, record


def _config(args) -> FitConfig:
    threads = args.threads if args.threads else (os.cpu_count() or 1)
    return FitConfig(max_iters=args.max_iters, tol=args.tol, seed=args.seed, threads=threads)


def _history_text(report) -> str:
    lines = ["iteration\tobjective"]
    lines += [f"{t}\t{obj!r}" for t, obj in enumerate(report.objectives)]
    return "\n".join(lines) + "\n"


# -- commands ----------------------------------------------------------------------------


def cmd_fit(args) -> int:
    table = read_csv(args.data)
    problem, record = _problem(args, table)
    config = _config(args)
    start = initialize(problem, args.init, args.seed)
    factors, report = fit(problem, start, config)
    out = Path(args.out or Path(args.data).with_suffix(".glrm"))
    history = Path(args.history or str(out) + ".history.tsv")
    meta = {"loss_overrides": record, "init": args.init, "seed": args.seed,
            "iterations": report.iterations, "termination": report.reason,
            "objective": report.final_objective}
    save_model(out, problem, factors, meta)
    history.write_text(_history_text(report))
    print(f"fit: objective {report.final_objective:.6g} after {report.iterations} iterations "
          f"({report.reason}); model -> {out}; history -> {history}")
    return 0


def cmd_impute(args) -> int:
    saved = load_model(args.model)
    table = read_csv(args.data, kind_hints=dict(enumerate(saved.kinds)))
    if table.names != saved.names:
        raise CliError("data columns do not match the model's columns")
    if table.m != saved.factors.X.shape[0]:
        raise CliError(f"data has {table.m} rows, the model was fitted on {saved.factors.X.shape[0]}")
    problem = saved.problem(table)
    full = impute_table(problem, saved.factors)
    if args.keep_observed:
        cols = []
        for j in range(table.n):
            c = full.columns[j].copy()
            keep = table.mask[:, j]
            c[keep] = table.columns[j][keep]
            cols.append(c)
        full = DataTable(cols, table.kinds, table.names, table.dictionaries, table.inference)
    out = args.out or str(Path(args.data).with_suffix("")) + ".imputed.csv"
    write_csv(full, out)
    print(f"impute: {int((~table.mask).sum())} missing cells filled; table -> {out}")
    return 0


def cmd_cv(args) -> int:
    table = read_csv(args.data)
    ranks = _ints(args.ranks) if args.ranks else [args.rank]
    gammas = _floats(args.gammas) if args.gammas else [args.gamma]
    problem, _ = _problem(args, table, k=ranks[0])
    result = cross_validate(problem, ranks, gammas, fraction=args.holdout_fraction, folds=args.folds,
                            seed=args.seed, config=_config(args), init=args.init)
    text = result.to_text()
    summary = ["k\tgamma\tmean_train_error\tmean_test_error"]
    summary += [f"{k}\t{g!r}\t{tr!r}\t{te!r}" for k, g, tr, te in result.summary()]
    best_k, best_g = result.best()
    summary.append(f"# best k={best_k} gamma={best_g!r}")
    if args.out:
        Path(args.out).write_text(text)
    print("\n".join(summary))
    return 0


def cmd_path(args) -> int:
    table = read_csv(args.data)
    gammas = _floats(args.gammas) if args.gammas else [10.0, 3.0, 1.0, 0.3, 0.1, 0.0]
    from .data import split_holdout
    train, held = split_holdout(table, args.holdout_fraction, args.seed)
    problem, _ = _problem(args, train)
    points = reg_path(problem, gammas, config=_config(args), truth=table, test_cells=held)
    text = path_report(points)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_certify(args) -> int:
    table = read_csv(args.data, kind_hints={j: Real() for j in range(_count_columns(args.data))})
    if args.model:
        saved = load_model(args.model)
        problem = saved.problem(table)
        factors = saved.factors
    else:
        A = table.to_array()
        if np.isnan(A).any():
            raise CliError("certify without --model needs a fully observed numeric table")
        problem = qrpca_problem(A, args.rank, args.gamma)
        factors = qrpca_solve(A, args.rank, args.gamma)
    cert = certify_global(problem, factors)
    print(f"spectral norm {cert.value!r}")
    print(f"alignment {cert.alignment!r}")
    if cert.note:
        print(f"note: {cert.note}")
    print("certified" if cert.certified else "uncertified")
    return 0


def _count_columns(path) -> int:
    with open(path) as fh:
        return len(fh.readline().rstrip("\n").split(","))


def cmd_synth(args) -> int:
    kw = {}
    if args.observe is not None:
        kw["observe"] = args.observe
    s = generate(args.preset, args.seed, **kw)
    out = Path(args.out or f"{args.preset}.csv")
    write_csv(s.observed, out)
    truth = out.with_name(out.stem + ".truth.csv")
    write_csv(s.truth, truth)
    print(f"synth: {args.preset} table {s.truth.m}x{s.truth.n}, {s.observed.n_observed} observed; "
          f"data -> {out}; truth -> {truth}")
    return 0


# -- parser ---------------------------------------------------------------------------------


def _model_flags(p, rank_default=2):
    p.add_argument("--rank", type=int, default=rank_default)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--loss-override", action="append", metavar="COL=NAME",
                   help="loss for one column (index or name), e.g. 3=quadratic or 2=quantile:0.9")
    p.add_argument("--reg", default="quadreg", metavar="NAME")
    p.add_argument("--col-reg", default=None, metavar="NAME")
    p.add_argument("--no-offset", action="store_true")
    p.add_argument("--no-scaling", action="store_true")
    p.add_argument("--init", choices=["svd", "random", "kmeanspp"], default="svd")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=0, help="0 means one per available core")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-4)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glrm", description="Generalized low rank models")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to a CSV table")
    p.add_argument("data")
    _model_flags(p)
    p.add_argument("--out")
    p.add_argument("--history")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("impute", help="fill a table from a fitted model")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out")
    p.add_argument("--keep-observed", action="store_true")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("cv", help="cross-validate over ranks and gammas")
    p.add_argument("data")
    _model_flags(p)
    p.add_argument("--ranks")
    p.add_argument("--gammas")
    p.add_argument("--holdout-fraction", type=float, default=0.1)
    p.add_argument("--folds", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("path", help="regularization path with held-out error")
    p.add_argument("data")
    _model_flags(p)
    p.add_argument("--gammas")
    p.add_argument("--holdout-fraction", type=float, default=0.1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("certify", help="global optimality certificate")
    p.add_argument("data")
    p.add_argument("--model")
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--gamma", type=float, default=1.0)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("synth", help="write a synthetic data set")
    p.add_argument("--preset", choices=sorted(PRESETS), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--observe", type=float, default=None, help="observed fraction (cv, regpath, censored)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DataError, ModelFormatError, CertificateError, ValueError, OSError) as e:
        print(f"glrm {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

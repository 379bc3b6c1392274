"""Command-line front end: ``grgmc {fit,path,cv,simulate,diagnose,prepare-birthweight}``.

Exit codes: 0 success, 1 usage or validation error, 2 numerical non-convergence.
Every command writes its resolved configuration to ``<out>.cfg`` as ``key=value``
lines, and all numbers are printed with 12 significant digits, so reruns with the
same inputs and seed produce identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .birthweight import prepare_birthweight
from .design import DesignError, GroupedDesign, StandardizationRecord, lambda_max, load_problem, standardize
from .fbs import ConvergenceError, DivergenceError
from .path import (
    LambdaGrid, SELECTION_THRESHOLD, cross_validate, fmt, make_grid, solution_path, write_cv_csv,
)
from .pdhg import ConvexityError, PdhgOptions, check_convexity, kkt_residual, pdhg_solve
from .penalties import GmcConfig, objective_value
from .simulate import CASES, run_case, theory_diagnostics, write_results_csv

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 1, 2
INTERCEPT = "(intercept)"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _probability(text: str) -> float:
    x = float(text)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in [0, 1], got {text}")
    return x


def _positive_int(text: str) -> int:
    x = int(text)
    if x < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return x


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grgmc", description="Group GMC penalized regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def problem(p):
        p.add_argument("--design", required=True, help="CSV with a header row; contains the response column")
        p.add_argument("--groups", help="CSV mapping column -> group")
        p.add_argument("--response", default="y", help="name of the response column (default: y)")
        p.add_argument("--alpha", type=_probability, default=0.5)
        p.add_argument("--standardize", action="store_true",
                       help="center y, center and scale X; coefficients are reported on the raw scale")

    def solver(p):
        p.add_argument("--tol", type=float, default=PdhgOptions.tol)
        p.add_argument("--max-iter", type=_positive_int, default=PdhgOptions.max_iter)

    def grid(p):
        p.add_argument("--nlambda", type=_positive_int, default=100)
        p.add_argument("--lambda-min-ratio", type=float, default=None,
                       help="default: 1e-3 when n > p, else 1e-2")

    def out(p, what):
        p.add_argument("--out", required=True, help=f"output {what}")

    p = sub.add_parser("fit", help="fit at a single lambda")
    problem(p)
    solver(p)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    out(p, "coefficient CSV")

    p = sub.add_parser("path", help="warm-started solution path")
    problem(p)
    solver(p)
    grid(p)
    out(p, "path CSV")

    p = sub.add_parser("cv", help="k-fold cross-validation over a lambda grid")
    problem(p)
    solver(p)
    grid(p)
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rule", choices=("min", "1se"), default="min")
    p.add_argument("--threads", type=_positive_int, default=1)
    out(p, "CV curve CSV")

    p = sub.add_parser("simulate", help="ANOVA simulation study")
    p.add_argument("--case", choices=sorted(CASES), required=True)
    p.add_argument("--replicates", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alphas", type=_float_list, default=None, help="comma-separated; default per case")
    p.add_argument("--values", type=_float_list, default=None,
                   help="comma-separated values of the case parameter; default per case")
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--nlambda", type=_positive_int, default=100)
    p.add_argument("--threads", type=_positive_int, default=1)
    solver(p)
    out(p, "results CSV")

    p = sub.add_parser("diagnose", help="lambda_max, convexity margin and theory quantities")
    problem(p)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="tuning parameter for the nu_j diagnostics (needed with --beta-star when alpha > 0)")
    p.add_argument("--beta-star", help="CSV 'column,coefficient' with the true coefficients")
    out(p, "report file")

    p = sub.add_parser("prepare-birthweight", help="build design and group CSVs from the raw birthwt table")
    p.add_argument("--raw", required=True, help="raw CSV (MASS birthwt columns)")
    p.add_argument("--design", required=True, help="output design CSV")
    p.add_argument("--groups", required=True, help="output column -> group CSV")
    p.add_argument("--response", default="bwt")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _write_sidecar(args, out: Path) -> None:
    lines = [f"version={__version__}"]
    for key, value in sorted(vars(args).items()):
        if key == "func":
            continue
        if isinstance(value, float):
            value = fmt(value)
        elif isinstance(value, tuple):
            value = ",".join(fmt(v) for v in value)
        lines.append(f"{key}={'' if value is None else value}")
    Path(f"{out}.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load(args) -> tuple[GroupedDesign, np.ndarray, GroupedDesign, np.ndarray, StandardizationRecord | None]:
    if not args.groups:
        raise UsageError("groups file required (--groups)")
    design, y = load_problem(args.design, args.groups, args.response)
    if not args.standardize:
        return design, y, design, y, None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit_design, fit_y, record = standardize(design, y)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return design, y, fit_design, fit_y, record


def _options(args) -> PdhgOptions:
    if not args.tol > 0:
        raise UsageError("--tol must be positive")
    return PdhgOptions(max_iter=args.max_iter, tol=args.tol)


def _raw_coefficients(beta, record):
    if record is None:
        return np.asarray(beta), None
    return record.unstandardize(beta)


def _coef_rows(design: GroupedDesign, beta, record):
    """``(column, group, coefficient)`` in the original column order, raw scale."""
    raw, intercept = _raw_coefficients(beta, record)
    if intercept is not None:
        yield INTERCEPT, INTERCEPT, intercept
    for col in np.argsort(design.permutation):
        yield design.column_names[col], design.group_names[design.group_index[col]], raw[col]


def _grid(args, design, y) -> LambdaGrid:
    if args.nlambda < 2:
        raise UsageError("--nlambda must be at least 2")
    ratio = args.lambda_min_ratio
    if ratio is not None and not 0 < ratio < 1:
        raise UsageError("--lambda-min-ratio must lie in (0, 1)")
    return make_grid(design, y, args.nlambda, ratio)


def _group_list(design, idx) -> str:
    return ",".join(design.group_names[j] for j in idx) or "(none)"


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    design, _, fd, fy, record = _load(args)
    if not args.lam >= 0:
        raise UsageError("--lambda must be nonnegative")
    cfg = GmcConfig(args.alpha, args.lam)
    beta, v, rep = pdhg_solve(fd, fy, cfg, _options(args))
    out = Path(args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "group", "coefficient"])
        for col, grp, coef in _coef_rows(design, beta, record):
            w.writerow([col, grp, fmt(coef)])
    active = np.flatnonzero(fd.block_norms(beta) > SELECTION_THRESHOLD)
    lines = [
        f"lambda={fmt(args.lam)}",
        f"lambda_max={fmt(lambda_max(fd, fy))}",
        f"alpha={fmt(args.alpha)}",
        f"objective={fmt(objective_value(beta, fd, fy, cfg))}",
        f"kkt_residual={fmt(kkt_residual(beta, v, fd, fy, cfg))}",
        f"iterations={rep.iterations}",
        f"converged={str(rep.converged).lower()}",
        f"active_groups={_group_list(fd, active)}",
    ] + [f"note={n}" for n in rep.notes]
    _report(lines, Path(f"{out}.report"))
    _write_sidecar(args, out)
    return EXIT_OK if rep.converged else EXIT_NONCONVERGED


def _report(lines, path: Path) -> None:
    text = "\n".join(lines) + "\n"
    path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_path(args) -> int:
    design, _, fd, fy, record = _load(args)
    grid = _grid(args, fd, fy)
    path = solution_path(fd, fy, grid, GmcConfig(args.alpha), _options(args))
    out = Path(args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "column", "group", "coefficient"])
        for k, lam in enumerate(grid.values):
            for col, grp, coef in _coef_rows(design, path.coefs[:, k], record):
                w.writerow([fmt(lam), col, grp, fmt(coef)])
    bad = int(np.sum(~path.converged))
    _report([f"points={len(grid)}", f"lambda_max={fmt(grid.values[0])}", f"nonconverged={bad}"],
            Path(f"{out}.report"))
    _write_sidecar(args, out)
    return EXIT_OK if bad == 0 else EXIT_NONCONVERGED


def cmd_cv(args) -> int:
    design, _, fd, fy, record = _load(args)
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    grid = _grid(args, fd, fy)
    cfg = GmcConfig(args.alpha)
    opts = _options(args)
    cv = cross_validate(fd, fy, args.folds, grid, cfg, args.seed, opts, args.rule, threads=args.threads)
    path = solution_path(fd, fy, LambdaGrid(grid.values[: cv.selected_index + 1]), cfg, opts)
    beta = path.coefs[:, -1]
    out = Path(args.out)
    write_cv_csv(cv, out)
    with open(f"{out}.coef", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "group", "coefficient"])
        for col, grp, coef in _coef_rows(design, beta, record):
            w.writerow([col, grp, fmt(coef)])
    norms = fd.block_norms(beta)
    active = np.flatnonzero(norms > SELECTION_THRESHOLD)
    excluded = np.flatnonzero(norms <= SELECTION_THRESHOLD)
    nonconv = cv.failures + int(np.sum(~path.converged))
    _report([
        f"selected_lambda={fmt(cv.selected_lambda)}",
        f"selected_index={cv.selected_index}",
        f"cv_error={fmt(cv.mean_error[cv.selected_index])}",
        f"nonzero_groups={active.size}",
        f"active_groups={_group_list(fd, active)}",
        f"excluded_groups={_group_list(fd, excluded)}",
        f"nonconverged={nonconv}",
    ], Path(f"{out}.report"))
    _write_sidecar(args, out)
    return EXIT_OK if nonconv == 0 else EXIT_NONCONVERGED


def cmd_simulate(args) -> int:
    out = Path(args.out)
    opts = _options(args)
    summaries = run_case(args.case, args.replicates, args.alphas, args.seed, args.values, args.n,
                         args.folds, args.nlambda, opts, args.threads)
    write_results_csv(summaries, out)
    failures = sum(s.failures for s in summaries)
    nonconv = sum(s.nonconverged for s in summaries)
    _report([f"cells={len(summaries)}", f"failures={failures}", f"nonconverged={nonconv}"],
            Path(f"{out}.report"))
    _write_sidecar(args, out)
    return EXIT_OK if failures == 0 and nonconv == 0 else EXIT_NONCONVERGED


def _read_beta_star(path, design: GroupedDesign) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or [h.strip() for h in rows[0][:2]] != ["column", "coefficient"]:
        raise DesignError(f"{path}: expected header 'column,coefficient'")
    index = {name: k for k, name in enumerate(design.column_names)}
    beta = np.zeros(design.p)
    for r in rows[1:]:
        name = r[0].strip()
        if name not in index:
            raise DesignError(f"{path}: unknown column '{name}'")
        try:
            beta[index[name]] = float(r[1])
        except (ValueError, IndexError):
            raise DesignError(f"{path}: bad coefficient for '{name}'") from None
    return beta


def cmd_diagnose(args) -> int:
    design, _, fd, fy, record = _load(args)
    lam = args.lam
    if lam is not None and not lam >= 0:
        raise UsageError("--lambda must be nonnegative")
    cfg = GmcConfig(args.alpha, 0.0 if lam is None else lam)
    margin = check_convexity(fd, cfg, margin=True)
    lines = [
        f"n={fd.n}",
        f"p={fd.p}",
        f"groups={fd.num_groups}",
        f"lambda_max={fmt(lambda_max(fd, fy))}",
        f"alpha={fmt(args.alpha)}",
        f"convexity_margin={fmt(margin.min_eig)}",
    ]
    if args.beta_star:
        beta_star = _read_beta_star(args.beta_star, design)
        if record is not None:
            beta_star = record.standardize_coef(beta_star)
        if cfg.penalty_metric(fd) is None:
            raise UsageError("--lambda > 0 is required for the nu diagnostics when alpha > 0")
        diag = theory_diagnostics(fd, beta_star, cfg)
        for j, name in enumerate(fd.group_names):
            lines.append(f"nu[{name}]={fmt(diag.nu[j])}")
        lines += [
            f"nu_max_support={'undefined' if np.isnan(diag.nu_max) else fmt(diag.nu_max)}",
            f"nu_min_complement={'undefined' if np.isnan(diag.nu_min) else fmt(diag.nu_min)}",
            f"assumption_nu_positive={str(diag.a3_holds).lower()}",
        ]
    out = Path(args.out)
    _report(lines, out)
    _write_sidecar(args, out)
    return EXIT_OK


def cmd_prepare_birthweight(args) -> int:
    prepare_birthweight(args.raw, args.design, args.groups, args.response)
    _write_sidecar(args, Path(args.design))
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "path": cmd_path,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "prepare-birthweight": cmd_prepare_birthweight,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, DesignError, ConvexityError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConvergenceError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())

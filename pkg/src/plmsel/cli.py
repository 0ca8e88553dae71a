"""Command-line entry point.

Subcommands::

    fit           unpenalized weighted fit with sandwich standard errors
    select        BIC-tuned penalized fit (SCAD or hard thresholding)
    simulate      one Monte Carlo cell, written as selection-summary CSV rows
    bench-table1  the full simulation grid, selection and error summaries
    bench-table2  the full simulation grid, standard-error summaries
    basis-dump    B-spline basis values on a grid

Every flag may also be given in a ``--config`` file of ``key = value``
lines using the flag names (with or without the leading dashes); flags
on the command line override the file.

Exit status is 0 on success, 2 for usage errors, 3 for data errors and 4
for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections.abc import Sequence
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import (
    ClusteredDataset,
    CovKind,
    WorkingCovarianceSpec,
    center_x,
    estimate_alpha,
    read_csv,
    rescale_z,
)
from .estimator import CURVE_GRID, fit_unpenalized
from .exceptions import (
    DataError,
    GenerationError,
    NumericalError,
    ParameterError,
    PLMError,
    UsageError,
)
from .penalties import LQA_EPS, SCAD_A, PenaltyKind, PenaltySpec
from .report import (
    TABLE1_COLUMNS,
    Report,
    format_float,
    table2_columns,
    write_csv,
    write_curves,
    write_report,
)
from .simulation import SimConfig, SimMetrics, run_study
from .solver import select_lambda
from .splines import basis_matrix, make_space

__all__ = ["RunConfig", "parse_config", "build_parser", "main", "EXIT_USAGE", "EXIT_DATA", "EXIT_NUMERIC"]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

COMMANDS = ("fit", "select", "simulate", "bench-table1", "bench-table2", "basis-dump")
TABLE2_COEFS = (0, 1, 4)


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting."""

    def error(self, message: str):  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in str(text).replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _word_list(text: str) -> tuple[str, ...]:
    return tuple(v.lower() for v in str(text).replace(",", " ").split())


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="file of key = value lines using these flag names")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_data(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", help="CSV with header subject,y,x...,z...[,time]")
    g.add_argument("--time-column", help="name of the observation-time column (required for rsm)")
    g.add_argument("--center-x", action="store_true", help="subtract pooled column means of X")
    g.add_argument("--rescale-z", action="store_true", help="map each Z column onto [0, 1]")


def _add_covariance(p: argparse.ArgumentParser, default: str = "wi") -> None:
    g = p.add_argument_group("working covariance")
    g.add_argument(
        "--covariance", "--cov", dest="covariance", default=default,
        choices=["wi", "ex", "ar1", "rsm"], type=str.lower,
    )
    g.add_argument("--alpha", type=float, help="correlation parameter; estimated when omitted")
    g.add_argument("--rsm-params", type=_float_list, help="tau2,nu2,omega2 for rsm")


def _add_spline(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("splines")
    g.add_argument("--degree", "--q", dest="degree", type=int, default=3)
    g.add_argument("--knots", type=int, default=4, help="number of interior knots")


def _add_penalty(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("penalty")
    g.add_argument("--penalty", default="scad", choices=["scad", "hard"], type=str.lower)
    g.add_argument("--a", type=float, default=SCAD_A, help="SCAD shape parameter")
    g.add_argument("--epsilon", type=float, default=LQA_EPS, help="LQA perturbation")
    g.add_argument("--grid-min", type=float, default=1e-3)
    g.add_argument("--grid-max", type=float, default=5.0)
    g.add_argument("--grid-size", type=int, default=40)


def _add_study(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("study")
    g.add_argument("--reps", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--working-alpha", type=float, help="fix the working alpha instead of estimating it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="plmsel",
        description="Penalized spline estimation and variable selection for clustered data.",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="unpenalized fit")
    _add_data(p)
    _add_covariance(p)
    _add_spline(p)
    p.add_argument("--out", help="JSON report path (stdout when omitted)")
    p.add_argument("--curves", help="curve CSV path (defaults next to --out)")
    _add_common(p)

    p = sub.add_parser("select", help="penalized fit with BIC tuning")
    _add_data(p)
    _add_covariance(p)
    _add_spline(p)
    _add_penalty(p)
    p.add_argument("--out", help="JSON report path (stdout when omitted)")
    p.add_argument("--curves", help="curve CSV path (defaults next to --out)")
    _add_common(p)

    p = sub.add_parser("simulate", help="one simulation cell")
    p.add_argument("--n", type=int, default=100, help="number of clusters")
    p.add_argument("--covariance", "--cov", dest="covariance", default="ex",
                   choices=["ex", "ar1", "wi"], type=str.lower)
    p.add_argument("--penalty", default="scad", choices=["scad", "hard"], type=str.lower)
    _add_study(p)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.add_argument("--report", help="optional JSON report with all metrics")
    _add_common(p)

    for name, what in (("bench-table1", "selection summaries"), ("bench-table2", "standard-error summaries")):
        p = sub.add_parser(name, help=f"full simulation grid: {what}")
        p.add_argument("--ns", type=_int_list, default=(100, 200, 400))
        p.add_argument("--covariances", type=_word_list, default=("ex", "ar1", "wi"))
        p.add_argument("--penalties", type=_word_list, default=("scad", "hard"))
        _add_study(p)
        p.add_argument("--out", help="CSV path (stdout when omitted)")
        _add_common(p)

    p = sub.add_parser("basis-dump", help="B-spline basis on a grid")
    p.add_argument("--degree", "--q", dest="degree", type=int, default=3)
    p.add_argument("--knots", type=int, default=4)
    p.add_argument("--grid", type=int, default=len(CURVE_GRID), help="number of grid points")
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    _add_common(p)
    return parser


@dataclass(frozen=True)
class RunConfig:
    """Validated settings of one command invocation."""

    command: str
    data: str | None = None
    time_column: str | None = None
    center_x: bool = False
    rescale_z: bool = False
    covariance: str = "wi"
    alpha: float | None = None
    rsm_params: tuple[float, ...] | None = None
    degree: int = 3
    knots: int = 4
    penalty: str = "scad"
    a: float = SCAD_A
    epsilon: float = LQA_EPS
    grid_min: float = 1e-3
    grid_max: float = 5.0
    grid_size: int = 40
    n: int = 100
    ns: tuple[int, ...] = (100, 200, 400)
    covariances: tuple[str, ...] = ("ex", "ar1", "wi")
    penalties: tuple[str, ...] = ("scad", "hard")
    reps: int = 100
    seed: int = 0
    workers: int = 1
    working_alpha: float | None = None
    grid: int = len(CURVE_GRID)
    out: str | None = None
    curves: str | None = None
    report: str | None = None
    config: str | None = None
    verbose: bool = False

    def __post_init__(self) -> None:
        c = self.command
        if c not in COMMANDS:
            raise UsageError(f"unknown command {c!r}")
        if c in ("fit", "select"):
            if not self.data:
                raise UsageError(f"{c} requires --data")
            if self.covariance == "rsm":
                if not self.time_column:
                    raise UsageError("--covariance rsm requires --time-column")
                if self.rsm_params is None or len(self.rsm_params) != 3:
                    raise UsageError("--covariance rsm requires --rsm-params tau2,nu2,omega2")
                if self.alpha is None:
                    raise UsageError("--covariance rsm requires --alpha")
        if c == "select":
            if not 0 < self.grid_min <= self.grid_max:
                raise UsageError("need 0 < --grid-min <= --grid-max")
            if self.grid_size < 1 or (self.grid_size > 1 and self.grid_min == self.grid_max):
                raise UsageError("--grid-size must be 1 for a single lambda, or the range must be nonempty")
        if c in ("fit", "select", "basis-dump"):
            if self.degree < 1 or self.knots < 0:
                raise UsageError("need --degree >= 1 and --knots >= 0")
        if c == "basis-dump" and self.grid < 2:
            raise UsageError("--grid must be at least 2")
        if c in ("simulate", "bench-table1", "bench-table2"):
            sizes = (self.n,) if c == "simulate" else self.ns
            if not sizes or min(sizes) < 10:
                raise UsageError("cluster counts must be at least 10")
            if self.reps < 1 or self.workers < 1:
                raise UsageError("--reps and --workers must be positive")
            bad = set(self.covariances) - {"ex", "ar1", "wi"} | set(self.penalties) - {"scad", "hard"}
            if bad:
                raise UsageError(f"unknown covariance or penalty names {sorted(bad)}")

    def lambda_grid(self) -> np.ndarray:
        return np.geomspace(self.grid_min, self.grid_max, self.grid_size)

    def working_spec(self, alpha: float | None = None) -> WorkingCovarianceSpec:
        kind = CovKind.parse(self.covariance)
        alpha = self.alpha if alpha is None else alpha
        if kind is CovKind.WI:
            return WorkingCovarianceSpec.independence()
        if kind is CovKind.RSM:
            tau2, nu2, omega2 = self.rsm_params  # type: ignore[misc]
            return WorkingCovarianceSpec.rsm(tau2, nu2, omega2, float(alpha))  # type: ignore[arg-type]
        return WorkingCovarianceSpec(kind, float(alpha))  # type: ignore[arg-type]


_FIELDS = {f.name for f in fields(RunConfig)}


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from exc
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        entries[key.lstrip("-")] = value
    return entries


def _config_defaults(sub: argparse.ArgumentParser, entries: dict[str, str]) -> dict[str, object]:
    by_name: dict[str, argparse.Action] = {}
    for action in sub._actions:
        for opt in action.option_strings:
            by_name[opt.lstrip("-")] = action
        by_name.setdefault(action.dest.replace("_", "-"), action)
    out: dict[str, object] = {}
    for key, value in entries.items():
        action = by_name.get(key.replace("_", "-"))
        if action is None or action.dest in ("help", "config"):
            raise UsageError(f"config key {key!r} is not a flag of {sub.prog}")
        if isinstance(action, argparse._StoreTrueAction):
            out[action.dest] = _parse_bool(value)
            continue
        try:
            converted = action.type(value) if action.type else value
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from None
        if action.choices is not None and converted not in action.choices:
            raise UsageError(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
        out[action.dest] = converted
    return out


def parse_config(argv: Sequence[str], config_file: str | Path | None = None) -> RunConfig:
    """Parse flags (and an optional config file) into a validated :class:`RunConfig`.

    ``config_file`` takes precedence over a ``--config`` flag; values from
    the file act as defaults that explicit flags override.
    """
    argv = list(argv)
    parser = build_parser()
    if not argv:
        raise UsageError("no command given")
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise UsageError("no command given")
    path = config_file if config_file is not None else ns.config
    if path is not None:
        sub = parser._subparsers._group_actions[0].choices[ns.command]  # type: ignore[union-attr]
        sub.set_defaults(**_config_defaults(sub, read_config_file(path)))
        ns = parser.parse_args(argv)
        ns.config = str(path)
    values = {k: v for k, v in vars(ns).items() if k in _FIELDS}
    try:
        return RunConfig(**values)
    except ParameterError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------- commands


def _load(cfg: RunConfig) -> tuple[ClusteredDataset, dict[str, object]]:
    ds = read_csv(cfg.data, time_column=cfg.time_column or "time")  # type: ignore[arg-type]
    info: dict[str, object] = {"n": ds.n, "n_T": ds.n_T, "d1": ds.d1, "d2": ds.d2}
    if cfg.center_x:
        ds, rec = center_x(ds)
        info["x_means"] = rec.x_means
    if cfg.rescale_z:
        ds, bounds = rescale_z(ds)
        info["z_bounds"] = [list(b) for b in bounds]
    return ds, info


def _resolve_spec(cfg: RunConfig, ds: ClusteredDataset, spaces) -> tuple[WorkingCovarianceSpec, bool]:
    kind = CovKind.parse(cfg.covariance)
    if kind in (CovKind.EX, CovKind.AR1) and cfg.alpha is None:
        pre = fit_unpenalized(ds, spaces, WorkingCovarianceSpec.independence())
        return cfg.working_spec(estimate_alpha(kind, pre.residuals)), True
    return cfg.working_spec(), False


def _spec_dict(spec: WorkingCovarianceSpec) -> dict[str, object]:
    return {
        "kind": spec.kind.value,
        "alpha": float(spec.alpha),
        "rsm_params": None if spec.rsm_params is None else list(spec.rsm_params),
    }


def _curves_path(cfg: RunConfig) -> Path | None:
    if cfg.curves:
        return Path(cfg.curves)
    if cfg.out:
        out = Path(cfg.out)
        return out.with_name(out.stem + "_curves.csv")
    return None


def _emit(report: Report, cfg: RunConfig) -> None:
    if cfg.out:
        write_report(report, cfg.out)
    else:
        sys.stdout.write(report.dumps())


def run_fit(cfg: RunConfig) -> Report:
    ds, info = _load(cfg)
    spaces = [make_space(cfg.degree, cfg.knots)] * ds.d2
    spec, estimated = _resolve_spec(cfg, ds, spaces)
    fit = fit_unpenalized(ds, spaces, spec)
    curves = _curves_path(cfg)
    if curves is not None and ds.d2:
        write_curves(curves, CURVE_GRID, fit.curves())
    else:
        curves = None
    results = {
        "names": list(ds.x_names),
        "beta": fit.beta_hat,
        "se": fit.se,
        "omega": fit.omega_hat,
        "intercept": fit.intercept_shift,
        "eta_curves_path": None if curves is None else str(curves),
        "working_covariance": _spec_dict(spec),
        "spline": {"degree": cfg.degree, "knots": cfg.knots, "dimension": cfg.degree + cfg.knots + 1},
    }
    diagnostics = {**info, **fit.diagnostics, "alpha_estimated": estimated}
    report = Report("fit", results, diagnostics)
    _emit(report, cfg)
    return report


def run_select(cfg: RunConfig) -> Report:
    ds, info = _load(cfg)
    spaces = [make_space(cfg.degree, cfg.knots)] * ds.d2
    spec, estimated = _resolve_spec(cfg, ds, spaces)
    fit = fit_unpenalized(ds, spaces, spec)
    penalty = PenaltySpec(PenaltyKind.parse(cfg.penalty), np.zeros(ds.d1), cfg.a, cfg.epsilon)
    pen, path = select_lambda(ds, spaces, spec, penalty, cfg.lambda_grid(), fit=fit)
    curves = _curves_path(cfg)
    if curves is not None and ds.d2:
        write_curves(curves, CURVE_GRID, pen.curves())
    else:
        curves = None
    active = np.zeros(ds.d1, dtype=bool)
    active[list(pen.active_set)] = True
    results = {
        "names": list(ds.x_names),
        "beta_p": pen.beta_p,
        "active_set": list(pen.active_set),
        "active": active,
        "se": pen.se_p,
        "lambda": pen.lambda_scalar,
        "lambda_vector": pen.lambda_vector,
        "bic": pen.bic,
        "bic_path": path.records(),
        "intercept": pen.intercept_shift,
        "eta_curves_path": None if curves is None else str(curves),
        "penalty": {"kind": penalty.kind.value, "a": penalty.a, "epsilon": penalty.epsilon},
        "working_covariance": _spec_dict(spec),
        "unpenalized": {"beta": fit.beta_hat, "se": fit.se},
    }
    diagnostics = {
        **info,
        **fit.diagnostics,
        "alpha_estimated": estimated,
        "iterations": pen.iterations,
        "converged": pen.converged,
        "effective_params": pen.effective_params,
        "grid_points_failed": int(np.sum(~path.converged)),
    }
    report = Report("select", results, diagnostics)
    _emit(report, cfg)
    return report


def _sim_config(cfg: RunConfig, n: int, cov: str, pen: str) -> SimConfig:
    return SimConfig(
        n=n,
        replicates=cfg.reps,
        seed=cfg.seed,
        working=CovKind.parse(cov),
        penalty=PenaltyKind.parse(pen),
        working_alpha=cfg.working_alpha,
        workers=cfg.workers,
    )


def _table1_row(n: int, penalty: str, cov: str, m: SimMetrics) -> list[object]:
    return [n, penalty, cov, m.C, m.I, m.MRME, m.RMSE]


def _table2_row(n: int, penalty: str, cov: str, m: SimMetrics) -> list[object]:
    row: list[object] = [cov, n, penalty]
    for k in TABLE2_COEFS:
        row += list(m.sd_table.get(k, (float("nan"),) * 3))
    return row


def _write_rows(cfg: RunConfig, columns: Sequence[str], rows: list[list[object]]) -> None:
    if cfg.out:
        write_csv(cfg.out, columns, rows)
        return
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])


def run_simulate(cfg: RunConfig) -> SimMetrics:
    metrics = run_study(_sim_config(cfg, cfg.n, cfg.covariance, cfg.penalty))
    cov, pen = cfg.covariance.upper(), cfg.penalty.upper()
    rows = [_table1_row(cfg.n, pen, cov, metrics), _table1_row(cfg.n, "ORACLE", cov, metrics.oracle)]  # type: ignore[arg-type]
    _write_rows(cfg, TABLE1_COLUMNS, rows)
    if cfg.report:
        doc = Report(
            "simulate",
            {"metrics": metrics.as_dict()},
            {"n_excluded": metrics.n_excluded, "seed": cfg.seed, "reps": cfg.reps},
        )
        write_report(doc, cfg.report)
    return metrics


def _bench(cfg: RunConfig) -> dict[tuple[int, str, str], SimMetrics]:
    cells: dict[tuple[int, str, str], SimMetrics] = {}
    for n in cfg.ns:
        for cov in cfg.covariances:
            for pen in cfg.penalties:
                log.info("cell n=%d covariance=%s penalty=%s", n, cov, pen)
                m = run_study(_sim_config(cfg, n, cov, pen))
                cells[(n, cov.upper(), pen.upper())] = m
                # Every penalty sees the same replicates, so one oracle row suffices.
                cells.setdefault((n, cov.upper(), "ORACLE"), m.oracle)  # type: ignore[arg-type]
    return cells


def _bench_rows(cfg: RunConfig, row_fn) -> list[list[object]]:
    cells = _bench(cfg)
    penalties = [p.upper() for p in cfg.penalties] + ["ORACLE"]
    covs = [c.upper() for c in cfg.covariances]
    return [row_fn(n, pen, cov, cells[(n, cov, pen)]) for n in cfg.ns for pen in penalties for cov in covs]


def run_bench_table1(cfg: RunConfig) -> None:
    _write_rows(cfg, TABLE1_COLUMNS, _bench_rows(cfg, _table1_row))


def run_bench_table2(cfg: RunConfig) -> None:
    rows = _bench_rows(cfg, _table2_row)
    rows.sort(key=lambda r: (cfg.covariances.index(str(r[0]).lower()), r[1]))
    _write_rows(cfg, table2_columns([k + 1 for k in TABLE2_COEFS]), rows)


def run_basis_dump(cfg: RunConfig) -> None:
    space = make_space(cfg.degree, cfg.knots)
    grid = np.linspace(0.0, 1.0, cfg.grid)
    basis = basis_matrix(space, grid)
    columns = ["z"] + [f"B{j + 1}" for j in range(space.dimension)]
    _write_rows(cfg, columns, [[float(z), *map(float, row)] for z, row in zip(grid, basis)])


_RUNNERS = {
    "fit": run_fit,
    "select": run_select,
    "simulate": run_simulate,
    "bench-table1": run_bench_table1,
    "bench-table2": run_bench_table2,
    "basis-dump": run_basis_dump,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        build_parser().print_help(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        build_parser().print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if cfg.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _RUNNERS[cfg.command](cfg)
    except (ParameterError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, GenerationError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PLMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())

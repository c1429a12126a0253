"""``fglasso`` command-line entry point.

Exit status: 0 success, 1 a fit did not converge, 2 invalid input or
configuration, 3 solver failure. On status 2 or 3 an ``error.txt`` with the
diagnostic is written to the output directory when one can be created.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .coloured_graph import Target, build_colour_classes, decompose_empirical, parse_model
from .io import (
    ConfigError,
    DatasetError,
    RunConfig,
    dot_graph,
    fit_summary,
    load_config,
    load_dataset,
    write_json,
    write_matrix_csv,
)
from .model_selection import (
    CRITERIA,
    LambdaGrid,
    count_df,
    information_criteria,
    lambda_bounds,
    log_likelihood,
    model_search,
    stability_selection,
)
from .simulation import DEFAULT_SCENARIOS, run_benchmark
from .solver import PenaltySpec, SampleCov, SolverError, fit

log = logging.getLogger("fglasso")

SUBCOMMANDS = ("fit", "select", "stability", "simulate", "bounds", "decompose")

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--input", help="wide CSV dataset with NAME@t headers")
    common.add_argument("--model", help='model such as "S0=F1 N0=FGamma S1=F1"')
    lam = common.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=float, help="fixed penalty")
    lam.add_argument("--grid", type=int, help="size of the log-spaced lambda grid")
    common.add_argument("--criterion", type=str.lower, choices=[c.lower() for c in CRITERIA])
    common.add_argument("--target", choices=["theta", "omega"])
    common.add_argument("--subsamples", type=int)
    common.add_argument("--fp-target", dest="fp_target", type=float,
                        help="tolerated expected false positives v")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--candidates", help="file with one candidate model per line")
    common.add_argument("--replications", type=int)
    common.add_argument("--jobs", type=int, help="worker processes for simulate")
    common.add_argument("--penalize-diagonal", dest="penalize_diagonal",
                        action="store_true", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fglasso",
                                     description="Factorial graphical lasso for dynamic networks")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True
    helps = {
        "fit": "fit one model and write theta, omega, summary and graph",
        "select": "rank candidate models over a lambda grid",
        "stability": "edge selection frequencies over subsamples",
        "simulate": "recovery benchmark on planted networks",
        "bounds": "print the lambda search interval",
        "decompose": "split the empirical concentration matrix by partition",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for key in ("input", "model", "target", "lam", "grid", "subsamples", "fp_target", "seed",
                "out", "candidates", "replications", "jobs", "penalize_diagonal"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, value)
    if args.lam is not None:
        cfg.grid = 20
    elif args.grid is not None:
        cfg.lam = None
    if args.criterion is not None:
        cfg.criterion = args.criterion
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.lam is not None and not (cfg.lam >= 0 and math.isfinite(cfg.lam)):
        raise ConfigError(f"lambda: must be a finite value >= 0, got {cfg.lam}")
    if cfg.grid < 1:
        raise ConfigError(f"grid: must be >= 1, got {cfg.grid}")
    if cfg.criterion.lower() not in [c.lower() for c in CRITERIA]:
        raise ConfigError(f"criterion: expected one of {', '.join(CRITERIA)}, got {cfg.criterion!r}")
    cfg.criterion = next(c for c in CRITERIA if c.lower() == cfg.criterion.lower())
    if cfg.target is not None and cfg.target not in ("theta", "omega"):
        raise ConfigError(f"target: expected theta or omega, got {cfg.target!r}")
    if cfg.subsamples < 1:
        raise ConfigError(f"subsamples: must be >= 1, got {cfg.subsamples}")
    if not cfg.fp_target > 0:
        raise ConfigError(f"fp_target: must be > 0, got {cfg.fp_target}")
    if cfg.replications < 1:
        raise ConfigError(f"replications: must be >= 1, got {cfg.replications}")
    if cfg.jobs < 1:
        raise ConfigError(f"jobs: must be >= 1, got {cfg.jobs}")
    if not cfg.out:
        raise ConfigError("out: must be a nonempty path")
    try:
        cfg.solver_options()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver options: {exc}") from None


def _require(cfg: RunConfig, *names):
    for name in names:
        if not getattr(cfg, name):
            raise ConfigError(f"{name}: required for this subcommand")


def _model(cfg: RunConfig, text: str | None = None):
    model = parse_model(text if text is not None else cfg.model)
    if cfg.target is not None:
        model = dataclasses.replace(model, target=Target(cfg.target))
    return model


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(cfg: RunConfig):
    _require(cfg, "input")
    ds = load_dataset(cfg.input)
    if ds.n < 2:
        raise DatasetError(f"{cfg.input}: need at least 2 rows, found {ds.n}")
    log.info("loaded %s: n=%d n_gamma=%d n_t=%d", cfg.input, ds.n, ds.index.n_gamma, ds.index.n_t)
    return ds, SampleCov.from_data(ds.values, ds.labels)


def _fmt(x) -> str:
    return repr(float(x))


def _short(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


# --------------------------------------------------------------------------
# subcommands


def cmd_fit(cfg: RunConfig) -> int:
    _require(cfg, "model")
    ds, cov = _load(cfg)
    model = _model(cfg)
    opts = cfg.solver_options()
    selection = None
    if cfg.lam is not None:
        classes = build_colour_classes(model, ds.index)
        res = fit(cov, model, PenaltySpec(cfg.lam, cfg.penalize_diagonal), opts,
                  index=ds.index, classes=classes)
    else:
        grid = LambdaGrid.for_cov(cov, cfg.grid)
        report = model_search(cov, [model], grid, cfg.criterion, ds.index, opts,
                              cfg.penalize_diagonal, keep_fits=True)
        chosen = report.chosen[cfg.criterion]
        if chosen is None:
            raise SolverError("no lambda on the grid produced a converged fit")
        res = report.fits[chosen]
        selection = {"criterion": cfg.criterion, "grid": [float(v) for v in grid.values]}
    res = res.with_df(count_df(res))
    ll = log_likelihood(res.theta_hat, cov)
    crit = information_criteria(res, cov.n, loglik=ll)
    out = _outdir(cfg)
    write_matrix_csv(out / "theta.csv", res.theta_hat, ds.labels)
    write_matrix_csv(out / "omega.csv", res.omega_hat, ds.labels)
    extra = {"selection": selection} if selection else None
    write_json(out / "fit.json", fit_summary(res, ds.labels, cov.n, crit, ll, extra))
    (out / "graph.dot").write_text(dot_graph(res, ds.labels))
    print(f"lambda {_fmt(res.lam)} objective {_fmt(res.objective)} df {res.df} "
          f"converged {str(res.converged).lower()}")
    if not res.converged:
        print(f"fit did not converge: {res.message}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _read_candidates(path) -> list:
    lines = []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if line:
                lines.append(line)
    if not lines:
        raise ConfigError(f"candidates: {path} lists no models")
    return lines


_ROW_FIELDS = ("candidate", "model", "lam", "loglik", "df", "AIC", "AICc", "BIC", "converged",
               "error")


def _row_cells(row):
    return [_fmt(v) if isinstance(v, float) else
            (str(v).lower() if isinstance(v, bool) else v)
            for v in (getattr(row, f) for f in _ROW_FIELDS)]


def cmd_select(cfg: RunConfig) -> int:
    _require(cfg, "candidates")
    ds, cov = _load(cfg)
    texts = _read_candidates(cfg.candidates)
    models = []
    for i, text in enumerate(texts, start=1):
        try:
            models.append(_model(cfg, text))
        except ValueError as exc:
            raise ConfigError(f"candidates line {i}: {exc}") from None
    grid = (LambdaGrid.from_bounds(cfg.lam, cfg.lam, 1) if cfg.lam is not None
            else LambdaGrid.for_cov(cov, cfg.grid))
    report = model_search(cov, models, grid, cfg.criterion, ds.index, cfg.solver_options(),
                          cfg.penalize_diagonal)
    out = _outdir(cfg)
    header = ["rank"] + ["lambda" if f == "lam" else f for f in _ROW_FIELDS]
    with open(out / "ranking.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rank, row in enumerate(report.ranked_rows(), start=1):
            w.writerow([rank] + _row_cells(row))
    with open(out / "path.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header[1:])
        for row in report.rows:
            w.writerow(_row_cells(row))
    chosen = report.chosen[cfg.criterion]
    summary = {
        "criterion": cfg.criterion,
        "grid": [float(v) for v in grid.values],
        "candidates": report.models,
        "ranking": [report.models[i] for i in report.ranking[cfg.criterion]],
        "chosen": None if chosen is None else {
            "model": report.rows[chosen].model,
            "lambda": report.rows[chosen].lam,
            "score": report.rows[chosen].score(cfg.criterion),
        },
    }
    write_json(out / "selection.json", summary)
    for rank, row in enumerate(report.ranked_rows(), start=1):
        print(f"{rank} {row.model} lambda {_fmt(row.lam)} {cfg.criterion} "
              f"{_fmt(row.score(cfg.criterion))}")
    return EXIT_OK if chosen is not None else EXIT_SOLVER


def cmd_stability(cfg: RunConfig) -> int:
    _require(cfg, "model")
    ds, cov = _load(cfg)
    model = _model(cfg)
    opts = cfg.solver_options()
    lam = cfg.lam
    if lam is None:
        grid = LambdaGrid.for_cov(cov, cfg.grid)
        report = model_search(cov, [model], grid, cfg.criterion, ds.index, opts,
                              cfg.penalize_diagonal)
        if report.chosen[cfg.criterion] is None:
            raise SolverError("no lambda on the grid produced a converged fit")
        lam = report.chosen_row().lam
        log.info("lambda %r chosen by %s", lam, cfg.criterion)
    try:
        res = stability_selection(ds.values, model, lam, cfg.subsamples, cfg.fp_target,
                                  cfg.seed, ds.index, opts, cfg.penalize_diagonal)
    except ValueError as exc:
        raise ConfigError(f"stability: {exc}") from None
    out = _outdir(cfg)
    write_matrix_csv(out / "pi.csv", res.pi, ds.labels)
    with open(out / "stable_edges.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from", "to", "pi"])
        for a, b in res.stable_edges:
            w.writerow([ds.labels[a], ds.labels[b], _fmt(res.pi[a, b])])
    write_json(out / "stability.json", {
        "model": model.to_dsl(),
        "lambda": float(res.lam),
        "subsamples": res.subsamples,
        "failures": res.failures,
        "seed": cfg.seed,
        "q": res.q,
        "k": res.k,
        "v": res.v,
        "pi_threshold": res.pi_threshold,
        "expected_fp_bound": res.fp_bound,
        "stable_edges": len(res.stable_edges),
    })
    print(f"q {_fmt(res.q)} k {res.k} pi_thr {_fmt(res.pi_threshold)} "
          f"bound {_fmt(res.fp_bound)} stable {len(res.stable_edges)}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    scenarios = cfg.scenarios or list(DEFAULT_SCENARIOS)
    table = run_benchmark(scenarios, replications=cfg.replications, seed=cfg.seed,
                          grid_size=cfg.grid, opts=cfg.solver_options(), n_jobs=cfg.jobs)
    out = _outdir(cfg)
    table.to_csv(out / "benchmark.csv")
    write_json(out / "benchmark.json", {
        **table.metadata,
        "seed": table.seed,
        "replications": table.replications,
        "scenarios": [dataclasses.asdict(s) | {"label": s.label} for s in scenarios],
    })
    print(f"wrote {len(table.rows)} rows to {out / 'benchmark.csv'}")
    return EXIT_OK


def cmd_bounds(cfg: RunConfig) -> int:
    _, cov = _load(cfg)
    lo, hi = lambda_bounds(cov)
    print(f"{_short(lo)} {_short(hi)}")
    return EXIT_OK


def cmd_decompose(cfg: RunConfig) -> int:
    ds, cov = _load(cfg)
    try:
        conc = np.linalg.inv(cov.s)
        np.linalg.cholesky(conc)
    except np.linalg.LinAlgError:
        raise DatasetError(
            f"sample covariance is singular (n={ds.n}, p={cov.p}); "
            "the empirical concentration matrix does not exist"
        ) from None
    conc = (conc + conc.T) / 2
    if cfg.target == "omega":
        root = np.sqrt(np.diag(conc))
        conc = conc / np.outer(root, root)
    out = _outdir(cfg)
    write_matrix_csv(out / "concentration.csv", conc, ds.labels)
    for name, part in decompose_empirical(conc, ds.index).items():
        write_matrix_csv(out / f"partition_{name}.csv", part, ds.labels)
    print(f"wrote {ds.index.n_t * 2} partition files to {out}")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "select": cmd_select,
    "stability": cmd_stability,
    "simulate": cmd_simulate,
    "bounds": cmd_bounds,
    "decompose": cmd_decompose,
}


def _diagnose(cfg, args, exc, status) -> int:
    msg = f"{type(exc).__name__}: {exc}"
    print(f"fglasso {args.command}: {msg}", file=sys.stderr)
    out = (cfg.out if cfg is not None else args.out) or None
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.txt").write_text(f"{args.command}\n{msg}\n")
        except OSError:
            pass
    return status


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = None
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, DatasetError, ValueError, OSError) as exc:
        return _diagnose(cfg, args, exc, EXIT_INPUT)
    except (SolverError, np.linalg.LinAlgError) as exc:
        return _diagnose(cfg, args, exc, EXIT_SOLVER)


if __name__ == "__main__":
    sys.exit(main())

"""Datasets, run configuration and artifact files.

Input data is wide CSV: one row per replicate, one column per variable, with
a header of ``NAME@t`` labels (``t`` in 1..n_t). Columns are reordered
time-major, natural vertices sorted by name within each time point.

Matrices are written as CSV with a leading label row and column; numbers use
``repr`` so they read back bit-identical.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .coloured_graph import GraphIndex
from .solver import FitResult, SolverOptions

__all__ = [
    "DatasetError",
    "ConfigError",
    "Dataset",
    "RunConfig",
    "parse_label",
    "load_dataset",
    "write_dataset",
    "write_matrix_csv",
    "read_matrix_csv",
    "fit_summary",
    "write_json",
    "dot_graph",
    "load_config",
    "parse_scenario",
    "FIT_SCHEMA",
]

FIT_SCHEMA = "fglasso-fit/1"


class DatasetError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def parse_label(label: str) -> tuple[str, int]:
    name, sep, t = label.strip().rpartition("@")
    if not sep or not name:
        raise DatasetError(f"column label {label!r} is not of the form NAME@t")
    try:
        t_int = int(t)
    except ValueError:
        raise DatasetError(f"column label {label!r}: time {t!r} is not an integer") from None
    if t_int < 1:
        raise DatasetError(f"column label {label!r}: time indices start at 1")
    return name, t_int


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray
    labels: tuple
    names: tuple
    index: GraphIndex

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_columns(cls, values, labels) -> "Dataset":
        """Validate ``NAME@t`` labels and canonicalise the column order."""
        values = np.asarray(values, dtype=float)
        labels = [str(s).strip() for s in labels]
        if values.ndim != 2 or values.shape[1] != len(labels):
            raise DatasetError("one label per column required")
        seen = {}
        for col, label in enumerate(labels):
            key = parse_label(label)
            if key in seen:
                raise DatasetError(
                    f"duplicate label {label!r} (columns {seen[key] + 1} and {col + 1})"
                )
            seen[key] = col
        names = sorted({k[0] for k in seen})
        n_t = max(k[1] for k in seen)
        missing = [f"{nm}@{t}" for t in range(1, n_t + 1) for nm in names if (nm, t) not in seen]
        if missing:
            raise DatasetError(f"missing columns: {', '.join(missing)}")
        order = [seen[(nm, t)] for t in range(1, n_t + 1) for nm in names]
        canon = tuple(f"{nm}@{t}" for t in range(1, n_t + 1) for nm in names)
        return cls(values[:, order], canon, tuple(names), GraphIndex(len(names), n_t))


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}: row {line_no} has {len(row)} fields, header has {len(header)}"
                )
            parsed = []
            for label, cell in zip(header, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DatasetError(
                        f"{path}: row {line_no}, column {label.strip()!r}: "
                        f"{cell!r} is not numeric"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return Dataset.from_columns(np.array(rows), header)


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset.labels)
        for row in dataset.values:
            writer.writerow([repr(float(v)) for v in row])


def write_matrix_csv(path, matrix, labels=None) -> None:
    matrix = np.asarray(matrix, dtype=float)
    labels = list(labels) if labels else [str(i + 1) for i in range(matrix.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([""] + labels)
        for label, row in zip(labels, matrix):
            writer.writerow([label] + [repr(float(v)) for v in row])


def read_matrix_csv(path):
    """Inverse of :func:`write_matrix_csv`: ``(matrix, labels)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    labels = tuple(rows[0][1:])
    matrix = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return matrix, labels


def _json_number(x):
    x = float(x)
    return x if math.isfinite(x) else None


def fit_summary(fit: FitResult, labels=(), n: int | None = None, criteria=None,
                loglik: float | None = None, extra: dict | None = None) -> dict:
    classes = fit.classes
    penalized = classes.penalized_mask(fit.penalty.penalize_diagonal)
    out = {
        "format": FIT_SCHEMA,
        "model": classes.model.to_dsl() if classes.model is not None else None,
        "target": fit.target.value,
        "lambda": _json_number(fit.lam),
        "penalize_diagonal": fit.penalty.penalize_diagonal,
        "n": n,
        "p": classes.index.p,
        "n_gamma": classes.index.n_gamma,
        "n_t": classes.index.n_t,
        "labels": list(labels),
        "objective": _json_number(fit.objective),
        "iterations": fit.iterations,
        "outer_iterations": fit.outer_iterations,
        "converged": bool(fit.converged),
        "message": fit.message,
        "kkt_residual": _json_number(fit.kkt),
        "df": fit.df,
        "loglik": None if loglik is None else _json_number(loglik),
        "criteria": None if criteria is None else {k: _json_number(v) for k, v in criteria.items()},
        "n_classes": classes.n_c,
        "classes": [
            {
                "id": m,
                "partition": cls.partition,
                "kind": cls.kind.value,
                "factor": cls.factor.value,
                "key": list(cls.key),
                "cells": len(cls.cells),
                "coefficient": _json_number(fit.coeffs[m]),
                "active": bool(fit.active[m]),
                "penalized": bool(penalized[m]),
            }
            for m, cls in enumerate(classes)
        ],
        "sigma0": None if fit.sigma0 is None else [float(s) for s in fit.sigma0],
    }
    if extra:
        out.update(extra)
    return out


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


_STYLES = ("solid", "dashed", "dotted", "bold")
_COLOURS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def dot_graph(fit: FitResult, labels=None) -> str:
    """Undirected DOT graph; every colour class gets its own ``class`` and style."""
    p = fit.classes.index.p
    labels = list(labels) if labels else [str(i + 1) for i in range(p)]
    lines = ["graph fgl {", "  node [shape=ellipse];"]
    lines += [f'  "{lab}";' for lab in labels]
    for m in np.flatnonzero(fit.active):
        cls = fit.classes[m]
        style = _STYLES[m % len(_STYLES)]
        colour = _COLOURS[(m // len(_STYLES)) % len(_COLOURS)]
        for a, b in fit.classes.class_edges(m):
            lines.append(
                f'  "{labels[a]}" -- "{labels[b]}" [class="colour{m}", '
                f'partition="{cls.partition}", style={style}, color="{colour}", '
                f'tooltip="{float(fit.theta_hat[a, b])!r}"];'
            )
    lines.append("}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    input: str | None = None
    model: str | None = None
    target: str | None = None
    lam: float | None = None
    grid: int = 20
    criterion: str = "AICc"
    subsamples: int = 100
    fp_target: float = 1.0
    seed: int = 0
    out: str = "."
    candidates: str | None = None
    replications: int = 100
    scenarios: list = field(default_factory=list)
    penalize_diagonal: bool = False
    jobs: int = 1
    solver: dict = field(default_factory=dict)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.solver)


_SOLVER_KEYS = {f.name: f.type for f in fields(SolverOptions)}
_KEY_ALIASES = {"lambda": "lam", "fp-target": "fp_target", "v": "fp_target",
                "scenario": "scenarios"}


def _coerce(key, value, kind):
    try:
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
        if kind in ("bool", bool):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {value!r} as {getattr(kind, '__name__', kind)}") from None
    return value


_FIELD_KINDS = {
    "input": str, "model": str, "target": str, "lam": float, "grid": int,
    "criterion": str, "subsamples": int, "fp_target": float, "seed": int, "out": str,
    "candidates": str, "replications": int, "penalize_diagonal": bool, "jobs": int,
}


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    """Read ``key = value`` lines (``#`` starts a comment).

    ``scenario`` may repeat; each value is ``g:20,g_star:0,t:3,n:50,seed:1``.
    Solver options go under their own names (``max_iterations`` ...).
    """
    cfg = base or RunConfig()
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = _KEY_ALIASES.get(key.lower(), key.lower())
            if key == "scenarios":
                cfg.scenarios.append(parse_scenario(value))
            elif key in _SOLVER_KEYS:
                cfg.solver[key] = _coerce(key, value, _SOLVER_KEYS[key])
            elif key in _FIELD_KINDS:
                setattr(cfg, key, _coerce(key, value, _FIELD_KINDS[key]))
            else:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
    return cfg


def parse_scenario(text: str):
    from .simulation import Scenario

    kinds = {"g": int, "g_star": int, "t": int, "n": int, "seed": int,
             "edge_prob": float, "name": str}
    kwargs = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if ":" not in part:
            raise ConfigError(f"scenario field {part!r} is not key:value")
        k, v = (s.strip() for s in part.split(":", 1))
        if k not in kinds:
            raise ConfigError(f"unknown scenario field {k!r}")
        kwargs[k] = _coerce(k, v, kinds[k])
    if "g" not in kwargs:
        raise ConfigError("scenario needs at least g")
    try:
        return Scenario(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from None

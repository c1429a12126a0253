"""Regularisation range, information criteria, model search and stability
selection for factorial graphical models."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .coloured_graph import ColouredModel, ColourClasses, GraphIndex, build_colour_classes
from .solver import (
    FitResult,
    PenaltySpec,
    SampleCov,
    SolverError,
    SolverOptions,
    fit,
)

__all__ = [
    "CRITERIA",
    "LambdaGrid",
    "SelectionRow",
    "SelectionReport",
    "StabilityResult",
    "lambda_bounds",
    "count_df",
    "log_likelihood",
    "information_criteria",
    "fit_path",
    "model_search",
    "pi_threshold",
    "expected_fp_bound",
    "stability_selection",
]

log = logging.getLogger(__name__)

CRITERIA = ("AIC", "AICc", "BIC")


def _criterion_name(name: str) -> str:
    for c in CRITERIA:
        if c.lower() == str(name).lower():
            return c
    raise ValueError(f"unknown criterion {name!r}; expected one of {', '.join(CRITERIA)}")


def _offdiag_abs(s):
    s = np.asarray(s)
    iu = np.triu_indices(s.shape[0], k=1)
    return np.abs(s[iu])


def lambda_bounds(cov: SampleCov) -> tuple[float, float]:
    """Smallest and largest off-diagonal ``|s_ab|``.

    Above the upper bound the all-free estimate has no edges; the same bound
    holds for every colouring since class gradients aggregate cell values.
    """
    if cov.p < 2:
        raise ValueError("need at least two variables")
    vals = _offdiag_abs(cov.s)
    return float(vals.min()), float(vals.max())


@dataclass(frozen=True)
class LambdaGrid:
    lower: float
    upper: float
    values: tuple

    @classmethod
    def from_bounds(cls, lower: float, upper: float, size: int = 20, floor_ratio: float = 1e-3):
        if not 0 <= lower <= upper:
            raise ValueError("need 0 <= lower <= upper")
        if size < 1:
            raise ValueError("grid needs at least one value")
        if upper == 0:
            return cls(lower, upper, (0.0,))
        bottom = max(lower, upper * floor_ratio)
        if size == 1 or bottom == upper:
            return cls(lower, upper, (float(upper),))
        vals = np.geomspace(upper, bottom, size)
        vals[0], vals[-1] = upper, bottom
        return cls(lower, upper, tuple(float(v) for v in vals))

    @classmethod
    def for_cov(cls, cov: SampleCov, size: int = 20) -> "LambdaGrid":
        return cls.from_bounds(*lambda_bounds(cov), size=size)


def count_df(fit_result: FitResult, classes: ColourClasses | None = None) -> int:
    """Number of colour classes with a nonzero coefficient.

    Diagonal classes always count; structural zeros never appear as classes.
    """
    classes = classes or fit_result.classes
    coeffs = np.asarray(fit_result.coeffs)
    if len(coeffs) != classes.n_c:
        raise ValueError("fit and classes disagree on the number of colours")
    active = (np.abs(coeffs) > fit_result.zero_threshold) | classes.diagonal_mask
    return int(np.count_nonzero(active))


def log_likelihood(theta, cov: SampleCov) -> float:
    """Gaussian log-likelihood ``n/2 (logdet theta - tr(S theta))``."""
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        raise ValueError("theta is not positive definite")
    return 0.5 * cov.n * (logdet - float(np.sum(cov.s * theta)))


def information_criteria(fit_result: FitResult, n: int, cov: SampleCov | None = None,
                         loglik: float | None = None) -> dict:
    """AIC, AICc and BIC of a fit.

    The log-likelihood is taken from ``loglik`` or recomputed from ``cov``.
    AICc is infinite when ``n <= df + 1``.
    """
    if loglik is None:
        if cov is None:
            raise ValueError("need either cov or loglik")
        loglik = log_likelihood(fit_result.theta_hat, cov)
    df = fit_result.df if fit_result.df is not None else count_df(fit_result)
    aic = -2.0 * loglik + 2.0 * df
    if n - df - 1 > 0:
        aicc = aic + 2.0 * df * (df + 1) / (n - df - 1)
    else:
        aicc = math.inf
    bic = -2.0 * loglik + math.log(n) * df
    return {"AIC": aic, "AICc": aicc, "BIC": bic}


def fit_path(cov: SampleCov, model: ColouredModel, lambdas, index: GraphIndex,
             opts: SolverOptions | None = None, penalize_diagonal: bool = False,
             classes: ColourClasses | None = None):
    """Fits along a sequence of lambdas with warm starts.

    Returns one entry per lambda: a FitResult, or the exception raised.
    """
    classes = classes or build_colour_classes(model, index)
    out = []
    warm = None
    for lam in lambdas:
        try:
            res = fit(cov, model, PenaltySpec(float(lam), penalize_diagonal), opts,
                      classes=classes, init=warm)
        except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
            out.append(exc)
            continue
        res = res.with_df(count_df(res, classes))
        warm = res.coeffs
        out.append(res)
    return out


@dataclass(frozen=True)
class SelectionRow:
    candidate: int
    model: str
    lam: float
    loglik: float
    df: int
    AIC: float
    AICc: float
    BIC: float
    converged: bool
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)

    def score(self, criterion: str) -> float:
        return getattr(self, _criterion_name(criterion))


@dataclass
class SelectionReport:
    """All (candidate, lambda) evaluations plus per-criterion choices.

    ``best[criterion][i]`` is the row index of candidate i's best lambda,
    ``ranking[criterion]`` orders candidates by that best score and
    ``chosen[criterion]`` is the overall winner row.
    """

    rows: list
    criterion: str
    models: list
    best: dict = field(default_factory=dict)
    ranking: dict = field(default_factory=dict)
    chosen: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict, repr=False)

    def chosen_row(self, criterion: str | None = None) -> SelectionRow:
        return self.rows[self.chosen[_criterion_name(criterion or self.criterion)]]

    def ranked_rows(self, criterion: str | None = None) -> list:
        c = _criterion_name(criterion or self.criterion)
        return [self.rows[self.best[c][i]] for i in self.ranking[c] if self.best[c][i] is not None]


def _rank(report: SelectionReport):
    n_models = len(report.models)
    for c in CRITERIA:
        best = [None] * n_models
        for r_idx, row in enumerate(report.rows):
            if row.failed or math.isnan(row.score(c)):
                continue
            cur = best[row.candidate]
            # ties break towards the larger lambda
            if cur is None or row.score(c) < report.rows[cur].score(c) or (
                row.score(c) == report.rows[cur].score(c) and row.lam > report.rows[cur].lam
            ):
                best[row.candidate] = r_idx
        report.best[c] = best

        def key(i, best=best, c=c):
            if best[i] is None:
                return (1, math.inf, i)
            return (0, report.rows[best[i]].score(c), i)

        report.ranking[c] = sorted(range(n_models), key=key)
        winner = report.ranking[c][0] if n_models else None
        report.chosen[c] = None if winner is None else best[winner]


def model_search(cov: SampleCov, candidates, grid: LambdaGrid, criterion: str = "AICc",
                 index: GraphIndex | None = None, opts: SolverOptions | None = None,
                 penalize_diagonal: bool = False, keep_fits: bool = False) -> SelectionReport:
    """Fit every candidate colouring over the lambda grid and rank them.

    Failed fits are recorded with their error and skipped in the ranking.
    Ties between candidates break by list position, then by larger lambda.
    """
    criterion = _criterion_name(criterion)
    if index is None:
        index = GraphIndex(cov.p, 1)
    candidates = list(candidates)
    rows = []
    fits = {}
    for ci, model in enumerate(candidates):
        label = model.to_dsl()
        try:
            classes = build_colour_classes(model, index)
        except ValueError as exc:
            for lam in grid.values:
                rows.append(SelectionRow(ci, label, lam, math.nan, 0, math.nan, math.nan,
                                         math.nan, False, str(exc)))
            continue
        path = fit_path(cov, model, grid.values, index, opts, penalize_diagonal, classes)
        for lam, res in zip(grid.values, path):
            if isinstance(res, Exception):
                rows.append(SelectionRow(ci, label, lam, math.nan, 0, math.nan, math.nan,
                                         math.nan, False, f"{type(res).__name__}: {res}"))
                continue
            ll = log_likelihood(res.theta_hat, cov)
            ic = information_criteria(res, cov.n, loglik=ll)
            rows.append(SelectionRow(ci, label, lam, ll, res.df, ic["AIC"], ic["AICc"],
                                     ic["BIC"], res.converged,
                                     "" if res.converged else f"not converged: {res.message}"))
            if keep_fits:
                fits[len(rows) - 1] = res
    report = SelectionReport(rows, criterion, [m.to_dsl() for m in candidates], fits=fits)
    _rank(report)
    return report


# --------------------------------------------------------------------------
# stability selection


def pi_threshold(q: float, k: int, v: float) -> float:
    """Selection-frequency threshold keeping the expected false positives at most v."""
    if q < 0 or k < 1 or v <= 0:
        raise ValueError("need q >= 0, k >= 1 and v > 0")
    if q * q > v * k:
        raise ValueError(
            f"q = {q:.4g} gives q^2 = {q * q:.4g} > v*k = {v * k:.4g}; increase v or lambda"
        )
    return 0.5 * (1.0 + q * q / (v * k))


def expected_fp_bound(q: float, k: int, pi_thr: float) -> float:
    """Upper bound on the expected number of falsely selected edges."""
    if not 0.5 < pi_thr <= 1.0:
        raise ValueError("pi_thr must lie in (1/2, 1]")
    if k < 1:
        raise ValueError("k must be >= 1")
    return q * q / ((2.0 * pi_thr - 1.0) * k)


@dataclass(frozen=True)
class StabilityResult:
    pi: np.ndarray
    stable_edges: tuple
    subsamples: int
    pi_threshold: float
    q: float
    k: int
    v: float
    lam: float
    failures: int = 0

    @property
    def fp_bound(self) -> float:
        return expected_fp_bound(self.q, self.k, self.pi_threshold)


def _subsample_rng(seed: int, b: int):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(b)]))


def stability_selection(data, model: ColouredModel, lam: float, subsamples: int = 100,
                        v: float = 1.0, seed: int = 0, index: GraphIndex | None = None,
                        opts: SolverOptions | None = None,
                        penalize_diagonal: bool = False) -> StabilityResult:
    """Edge selection frequencies over half-size subsamples.

    Each subsample draws ``n // 2`` rows without replacement from a generator
    keyed by ``(seed, b)``, fits at ``lam`` and marks every edge of every
    selected colour class. ``k`` is the number of penalised classes.
    """
    x = np.asarray(data, dtype=float)
    n, p = x.shape
    if n < 4:
        raise ValueError("need at least 4 observations")
    if subsamples < 1:
        raise ValueError("need at least one subsample")
    if index is None:
        index = GraphIndex(p, 1)
    if index.p != p:
        raise ValueError("data width does not match the graph index")
    classes = build_colour_classes(model, index)
    k = int(np.count_nonzero(classes.penalized_mask(penalize_diagonal)))
    counts = np.zeros((p, p))
    sizes = []
    failures = 0
    penalty = PenaltySpec(float(lam), penalize_diagonal)
    for b in range(subsamples):
        rows = _subsample_rng(seed, b).choice(n, size=n // 2, replace=False)
        cov = SampleCov.from_data(x[rows])
        try:
            res = fit(cov, model, penalty, opts, classes=classes)
        except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("subsample %d failed: %s", b, exc)
            failures += 1
            continue
        edges = res.edge_set()
        sizes.append(len(edges))
        for a, c in edges:
            counts[a, c] += 1
            counts[c, a] += 1
    done = subsamples - failures
    if done == 0:
        raise SolverError("every subsample fit failed")
    pi = counts / done
    q = float(np.mean(sizes))
    thr = pi_threshold(q, k, v)
    iu = np.triu_indices(p, k=1)
    stable = tuple((int(a), int(c)) for a, c in zip(*iu) if pi[a, c] >= thr)
    return StabilityResult(pi, stable, done, thr, q, k, float(v), float(lam), failures)

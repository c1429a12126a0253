"""Planted factorial networks, Gaussian sampling and recovery benchmarks."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from .coloured_graph import (
    ColouredModel,
    GraphIndex,
    build_colour_classes,
    parse_model,
    unconstrained_model,
)
from .model_selection import CRITERIA, LambdaGrid, fit_path, information_criteria, log_likelihood
from .solver import SampleCov, SolverOptions

__all__ = [
    "RNG_ALGORITHM",
    "TRUE_MODEL",
    "Scenario",
    "DEFAULT_SCENARIOS",
    "ConfusionMetrics",
    "BenchmarkRow",
    "BenchmarkTable",
    "generate_true_model",
    "sample_mvn",
    "confusion_metrics",
    "run_benchmark",
]

log = logging.getLogger(__name__)

RNG_ALGORITHM = f"numpy.random.PCG64 (numpy {np.__version__})"
TRUE_MODEL = "S0=FGammaT N0=FGamma S1=F1"


@dataclass(frozen=True)
class Scenario:
    g: int
    g_star: int = 0
    t: int = 3
    n: int = 50
    seed: int = 0
    edge_prob: float = 0.3
    name: str = ""

    def __post_init__(self):
        if self.g < 1 or self.g_star < 0 or self.t < 1:
            raise ValueError("need g >= 1, g_star >= 0, t >= 1")
        if self.n < 2:
            raise ValueError("need n >= 2")

    @property
    def p(self) -> int:
        return (self.g + self.g_star) * self.t

    @property
    def index(self) -> GraphIndex:
        return GraphIndex(self.g + self.g_star, self.t)

    @property
    def label(self) -> str:
        return self.name or f"g{self.g}_gs{self.g_star}_t{self.t}_n{self.n}"


DEFAULT_SCENARIOS = (
    Scenario(20, 0, 3, 50, name="1"),
    Scenario(20, 20, 3, 50, name="2"),
    Scenario(20, 40, 3, 50, name="3"),
    Scenario(20, 60, 3, 50, name="4"),
)


def generate_true_model(scenario: Scenario):
    """Random precision matrix with the planted colouring of ``TRUE_MODEL``.

    Diagonal classes are uniform on [1, 1.5], the single self-lag class is
    -0.4, and each lag-0 network class is kept with probability
    ``edge_prob`` with a value of random sign and magnitude in [0.2, 0.4].
    If the smallest eigenvalue is at most 0.05 the active diagonal is shifted
    up by ``|lambda_min| + 0.1``. Inert vertices are independent with unit
    precision.
    """
    rng = np.random.default_rng(scenario.seed)
    model = parse_model(TRUE_MODEL)
    active = GraphIndex(scenario.g, scenario.t)
    classes = build_colour_classes(model, active)
    coeffs = np.zeros(classes.n_c)
    for m, cls in enumerate(classes):
        if cls.is_diagonal:
            coeffs[m] = rng.uniform(1.0, 1.5)
        elif cls.partition == "S1":
            coeffs[m] = -0.4
        else:
            keep = rng.uniform() < scenario.edge_prob
            value = rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 0.4)
            coeffs[m] = value if keep else 0.0
    block = classes.assemble(coeffs)
    lam_min = float(linalg.eigvalsh(block, subset_by_index=[0, 0])[0])
    if lam_min <= 0.05:
        block[np.diag_indices_from(block)] += abs(lam_min) + 0.1
    full = scenario.index
    pos = np.array([full.vertex_of(*active.decode(a)) for a in range(active.p)])
    theta = np.eye(full.p)
    theta[np.ix_(pos, pos)] = block
    return theta, model


def sample_mvn(theta, n: int, seed) -> np.ndarray:
    """``n`` draws from ``N(0, theta^{-1})`` as an ``n x p`` matrix."""
    theta = np.asarray(theta, dtype=float)
    try:
        chol = np.linalg.cholesky(theta)
    except np.linalg.LinAlgError:
        raise ValueError("theta is not positive definite") from None
    z = np.random.default_rng(seed).standard_normal((theta.shape[0], n))
    # x = L^{-T} z has covariance (L L^T)^{-1}
    return linalg.solve_triangular(chol, z, lower=True, trans="T").T


@dataclass(frozen=True)
class ConfusionMetrics:
    fp_rate: float
    fn_rate: float
    tp_rate: float
    tn_rate: float
    fd_rate: float
    fnd_rate: float
    sign_agreement: float
    counts: tuple = ()


def _ratio(a, b):
    return a / b if b else 0.0


def confusion_metrics(theta_true, theta_hat, zero_threshold: float = 1e-8) -> ConfusionMetrics:
    """Edge-recovery rates over the upper-triangular off-diagonal cells."""
    theta_true = np.asarray(theta_true, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_true.shape != theta_hat.shape or theta_true.ndim != 2:
        raise ValueError("matrices must have the same square shape")
    iu = np.triu_indices(theta_true.shape[0], k=1)
    truth = theta_true[iu]
    est = theta_hat[iu]
    true_edge = np.abs(truth) > zero_threshold
    est_edge = np.abs(est) > zero_threshold
    tp = int(np.count_nonzero(true_edge & est_edge))
    fn = int(np.count_nonzero(true_edge & ~est_edge))
    fp = int(np.count_nonzero(~true_edge & est_edge))
    tn = int(np.count_nonzero(~true_edge & ~est_edge))
    same_sign = int(np.count_nonzero(true_edge & est_edge & (np.sign(truth) == np.sign(est))))
    return ConfusionMetrics(
        fp_rate=_ratio(fp, fp + tn),
        fn_rate=_ratio(fn, fn + tp),
        tp_rate=_ratio(tp, fn + tp),
        tn_rate=_ratio(tn, fp + tn),
        fd_rate=_ratio(fp, fp + tp),
        fnd_rate=_ratio(fn, fn + tn),
        sign_agreement=_ratio(same_sign, tp),
        counts=(tp, fp, tn, fn),
    )


# --------------------------------------------------------------------------
# benchmark


METRIC_FIELDS = ("fp_rate", "fn_rate", "tp_rate", "tn_rate", "fd_rate", "fnd_rate",
                 "sign_agreement")


@dataclass(frozen=True)
class BenchmarkRow:
    scenario: str
    method: str
    criterion: str
    fp_rate: float
    fn_rate: float
    tp_rate: float
    tn_rate: float
    fd_rate: float
    fnd_rate: float
    sign_agreement: float
    replications: int
    failures: int


@dataclass
class BenchmarkTable:
    rows: list
    replications: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def get(self, scenario: str, method: str, criterion: str) -> BenchmarkRow:
        for row in self.rows:
            if (row.scenario, row.method, row.criterion) == (scenario, method, criterion):
                return row
        raise KeyError((scenario, method, criterion))

    def to_csv(self, path) -> None:
        names = list(BenchmarkRow.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names)
            for row in self.rows:
                writer.writerow([repr(v) if isinstance(v, float) else v
                                 for v in asdict(row).values()])


def _method_model(method: str, true_model: ColouredModel, n_t: int) -> ColouredModel:
    if method == "FGL":
        return true_model
    if method == "GLASSO":
        return unconstrained_model(n_t)
    raise ValueError(f"unknown method {method!r}; expected FGL or GLASSO")


def _replicate(task):
    """Metrics of one replication: {(method, criterion): metrics or None}."""
    scenario, s_idx, rep, seed, methods, criteria, grid_size, opts, hook = task
    theta_true, true_model = generate_true_model(scenario)
    data = sample_mvn(theta_true, scenario.n, [seed, s_idx, rep])
    cov = SampleCov.from_data(data)
    out = {}
    for method in methods:
        if hook is not None:
            for c in criteria:
                out[(method, c)] = confusion_metrics(theta_true, hook(theta_true, data, method, c))
            continue
        model = _method_model(method, true_model, scenario.t)
        grid = LambdaGrid.for_cov(cov, grid_size)
        path = fit_path(cov, model, grid.values, scenario.index, opts)
        scored = []
        for res in path:
            if isinstance(res, Exception) or not res.converged:
                continue
            ll = log_likelihood(res.theta_hat, cov)
            scored.append((res, information_criteria(res, cov.n, loglik=ll)))
        for c in criteria:
            if not scored:
                out[(method, c)] = None
                continue
            # first minimum in descending-lambda order prefers the sparser fit
            best = min(range(len(scored)), key=lambda i: (scored[i][1][c], i))
            out[(method, c)] = confusion_metrics(
                theta_true, scored[best][0].theta_hat, scored[best][0].zero_threshold
            )
    return out


def run_benchmark(scenarios, methods=("FGL", "GLASSO"), criteria=CRITERIA,
                  replications: int = 100, seed: int = 0, grid_size: int = 20,
                  opts: SolverOptions | None = None, estimate_hook=None,
                  n_jobs: int = 1) -> BenchmarkTable:
    """Average recovery metrics of each method and criterion over replications.

    The truth of a scenario comes from ``scenario.seed`` and stays fixed;
    replication r of scenario i samples its data with seed ``[seed, i, r]``.
    ``estimate_hook(theta_true, data, method, criterion) -> theta_hat``
    replaces the fitting step (used for testing). With ``n_jobs > 1`` the
    replications run in worker processes; results are identical to a serial
    run.
    """
    if replications < 1:
        raise ValueError("need at least one replication")
    criteria = tuple(criteria)
    methods = tuple(methods)
    tasks = [
        (sc, i, r, seed, methods, criteria, grid_size, opts, estimate_hook)
        for i, sc in enumerate(scenarios)
        for r in range(replications)
    ]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_replicate, tasks))
    else:
        results = [_replicate(t) for t in tasks]
    rows = []
    for i, sc in enumerate(scenarios):
        mine = results[i * replications:(i + 1) * replications]
        for method in methods:
            for c in criteria:
                ok = [res[(method, c)] for res in mine if res[(method, c)] is not None]
                failures = replications - len(ok)
                means = {
                    f: (float(np.mean([getattr(m, f) for m in ok])) if ok else math.nan)
                    for f in METRIC_FIELDS
                }
                rows.append(BenchmarkRow(sc.label, method, c, replications=replications,
                                         failures=failures, **means))
    meta = {"rng": RNG_ALGORITHM, "grid_size": grid_size, "true_model": TRUE_MODEL}
    return BenchmarkTable(rows, replications, seed, meta)

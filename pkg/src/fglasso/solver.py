"""Penalised log-determinant estimation under colour-class constraints.

The precision matrix is parametrised by one value per colour class,
``Theta(x) = sum_m x_m X_m``, so the equality constraints and structural zeros
hold identically. The resulting problem

    minimize  -logdet Theta(x) + tr(S Theta(x)) + lambda * sum_m w_m |x_m|

is convex in ``x`` and is solved by a proximal Newton method: each step
minimises a quadratic model of the smooth part plus the weighted l1 term
(accelerated proximal gradient, then an exact solve on the detected
support), followed by a backtracking line search that also rejects points
outside the positive-definite cone.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import LinearOperator, cg

from .coloured_graph import (
    ColouredModel,
    ColourClasses,
    ConstraintMap,
    GraphIndex,
    Target,
    build_colour_classes,
)

__all__ = [
    "SampleCov",
    "PenaltySpec",
    "SolverOptions",
    "FitResult",
    "SolverError",
    "neg_log_likelihood",
    "fit",
    "fit_fgl_theta",
    "fit_fgl_omega",
    "scale_to_conditional_correlation",
    "class_gradient",
    "kkt_residual",
    "verify_constraints",
]

log = logging.getLogger(__name__)

# Above this many free cells the Hessian is applied matrix-free.
_DENSE_HESSIAN_LIMIT = 2500


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SampleCov:
    """Sample covariance ``s`` estimated from ``n`` observations."""

    s: np.ndarray
    n: int
    labels: tuple = ()

    def __post_init__(self):
        s = np.array(self.s, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"covariance must be square, got shape {s.shape}")
        scale = max(float(np.max(np.abs(s))), 1e-300)
        asym = float(np.max(np.abs(s - s.T))) / scale
        if asym > 1e-8:
            raise ValueError(f"covariance is not symmetric (relative asymmetry {asym:.2e})")
        s = (s + s.T) / 2
        s.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.labels and len(self.labels) != s.shape[0]:
            raise ValueError("one label per variable required")
        if self.n < 1:
            raise ValueError("sample count must be positive")

    @property
    def p(self) -> int:
        return self.s.shape[0]

    @classmethod
    def from_data(cls, data, labels=()) -> "SampleCov":
        """Maximum-likelihood covariance (divisor n) of centred rows."""
        x = np.asarray(data, dtype=float)
        if x.ndim != 2:
            raise ValueError("data must be an n x p matrix")
        x = x - x.mean(axis=0)
        return cls(x.T @ x / x.shape[0], x.shape[0], labels)


@dataclass(frozen=True)
class PenaltySpec:
    lam: float = 0.0
    penalize_diagonal: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 2000
    objective_tolerance: float = 1e-9
    kkt_tolerance: float = 1e-10
    zero_threshold: float = 1e-8
    omega_outer_max: int = 25
    omega_outer_tolerance: float = 1e-6

    def __post_init__(self):
        for name in ("max_iterations", "objective_tolerance", "kkt_tolerance",
                     "zero_threshold", "omega_outer_max", "omega_outer_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class FitResult:
    theta_hat: np.ndarray
    coeffs: np.ndarray
    lam: float
    objective: float
    iterations: int
    converged: bool
    classes: ColourClasses
    penalty: PenaltySpec
    target: Target = Target.THETA
    sigma0: np.ndarray | None = None
    outer_iterations: int = 0
    kkt: float = math.nan
    df: int | None = None
    history: tuple = ()
    message: str = ""
    zero_threshold: float = 1e-8

    @property
    def omega_hat(self) -> np.ndarray:
        return scale_to_conditional_correlation(self.theta_hat)

    @property
    def active(self) -> np.ndarray:
        """Classes whose coefficient is reported as nonzero."""
        return np.abs(self.coeffs) > self.zero_threshold

    def edge_set(self) -> frozenset:
        edges = set()
        for m in np.flatnonzero(self.active):
            edges.update(self.classes.class_edges(m))
        return frozenset(edges)

    def with_df(self, df: int) -> "FitResult":
        return replace(self, df=df)


def _cholesky(theta):
    try:
        return np.linalg.cholesky(theta)
    except np.linalg.LinAlgError:
        return None


def neg_log_likelihood(theta, cov: SampleCov) -> float:
    """``-logdet(theta) + tr(S theta)``, constants dropped."""
    theta = np.asarray(theta, dtype=float)
    chol = _cholesky(theta)
    if chol is None:
        raise ValueError("theta is not positive definite")
    return float(-2.0 * np.sum(np.log(np.diag(chol))) + np.sum(cov.s * theta))


def scale_to_conditional_correlation(theta) -> np.ndarray:
    """``omega_ab = -theta_ab / sqrt(theta_aa theta_bb)`` with unit diagonal."""
    theta = np.asarray(theta, dtype=float)
    d = np.diag(theta)
    if np.any(d <= 0):
        raise ValueError("theta has a non-positive diagonal entry")
    root = np.sqrt(d)
    omega = -theta / np.outer(root, root)
    np.fill_diagonal(omega, 1.0)
    return omega


# --------------------------------------------------------------------------
# reduced problem


class _Reduced:
    """Smooth part, gradient and Hessian in colour-coefficient space.

    Every classed upper-triangular cell u = (a, b) of class m holds
    ``scale_u * x_m``; ``mult_u`` is 2 off the diagonal and 1 on it.
    """

    def __init__(self, s, classes: ColourClasses, pen, scale=None):
        self.s = s
        self.classes = classes
        self.rows, self.cols, self.ids = classes.cell_arrays
        self.n_c = classes.n_c
        self.scale = np.ones(len(self.rows)) if scale is None else np.asarray(scale, float)
        mult = np.where(self.rows == self.cols, 1.0, 2.0)
        self.cr = mult * self.scale
        self.pen = np.asarray(pen, dtype=float)
        self.s_cells = s[self.rows, self.cols]

    def theta(self, x):
        return self.classes.assemble(x, self.scale)

    def smooth(self, theta, chol):
        return float(-2.0 * np.sum(np.log(np.diag(chol))) + np.sum(self.s * theta))

    def objective(self, x, theta, chol):
        return self.smooth(theta, chol) + float(np.sum(self.pen * np.abs(x)))

    def gradient(self, w):
        resid = self.s_cells - w[self.rows, self.cols]
        return np.bincount(self.ids, weights=self.cr * resid, minlength=self.n_c)

    def hessian(self, w, free):
        """Hessian restricted to ``free`` classes: a dense array or an operator."""
        pos = np.full(self.n_c, -1, dtype=np.intp)
        pos[free] = np.arange(len(free))
        sel = pos[self.ids] >= 0
        a, b, f = self.rows[sel], self.cols[sel], self.cr[sel]
        k = pos[self.ids[sel]]
        nf = len(free)
        if len(a) <= _DENSE_HESSIAN_LIMIT:
            h = w[np.ix_(a, a)] * w[np.ix_(b, b)] + w[np.ix_(a, b)] * w[np.ix_(b, a)]
            h *= np.outer(f, f) / 2.0
            c = csr_matrix((np.ones(len(a)), (np.arange(len(a)), k)), shape=(len(a), nf))
            hc = np.asarray(c.T @ h)
            return np.asarray(c.T @ hc.T).T
        p = w.shape[0]
        sc = self.scale[sel]

        def matvec(v):
            v = np.ravel(v)
            vm = np.zeros((p, p))
            vals = v[k] * sc
            vm[a, b] = vals
            vm[b, a] = vals
            prod = w @ vm @ w
            return np.bincount(k, weights=f * prod[a, b], minlength=nf)

        return LinearOperator((nf, nf), matvec=matvec, dtype=float)


def _matvec(h):
    return h.__matmul__ if isinstance(h, np.ndarray) else h.matvec


def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _largest_eigenvalue(h, n):
    if isinstance(h, np.ndarray):
        if n <= 400:
            return float(linalg.eigvalsh(h, subset_by_index=[n - 1, n - 1])[0])
    mv = _matvec(h)
    v = np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(100):
        u = mv(v)
        new = float(np.linalg.norm(u))
        if new == 0.0:
            return 1.0
        v = u / new
        if abs(new - est) <= 1e-4 * new:
            est = new
            break
        est = new
    return est * 1.05


def _lasso_qp(h, b, pen, z0, max_iter=500, tol=1e-12):
    """Minimise ``b.z + z'Hz/2 + sum pen|z|`` by FISTA with adaptive restart."""
    n = len(b)
    mv = _matvec(h)
    step = 1.0 / max(_largest_eigenvalue(h, n), 1e-300)
    z = z0.copy()
    y = z.copy()
    t = 1.0
    for _ in range(max_iter):
        z_new = _soft(y - step * (b + mv(y)), step * pen)
        if np.dot(y - z_new, z_new - z) > 0:
            t = 1.0
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = z_new + ((t - 1.0) / t_new) * (z_new - z)
        moved = float(np.max(np.abs(z_new - z))) if n else 0.0
        z, t = z_new, t_new
        if moved <= tol * max(1.0, float(np.max(np.abs(z)))):
            break
    return z


def _solve_sub(h, rhs, idx, n):
    if isinstance(h, np.ndarray):
        sub = h[np.ix_(idx, idx)]
        try:
            return linalg.solve(sub, rhs, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            return None
    mv = h.matvec

    def restricted(v):
        full = np.zeros(n)
        full[idx] = np.ravel(v)
        return mv(full)[idx]

    op = LinearOperator((len(idx), len(idx)), matvec=restricted, dtype=float)
    sol, info = cg(op, rhs, rtol=1e-13, atol=0.0, maxiter=10 * len(idx))
    return sol if info == 0 else None


def _refine_support(h, b, pen, z):
    """Exact minimiser of the quadratic model on the support found by FISTA.

    Returns None when the sign pattern is not self-consistent.
    """
    n = len(b)
    mv = _matvec(h)
    active = (z != 0) | (pen == 0)
    signs = np.sign(z)
    for _ in range(8):
        idx = np.flatnonzero(active)
        sol = np.zeros(n)
        if len(idx):
            rhs = -(b[idx] + pen[idx] * signs[idx])
            part = _solve_sub(h, rhs, idx, n)
            if part is None:
                return None
            penalised = pen[idx] > 0
            if np.any(np.sign(part[penalised]) != signs[idx][penalised]):
                return None
            sol[idx] = part
        grad = b + mv(sol)
        slack = np.abs(grad) - pen * (1.0 + 1e-9) - 1e-13
        bad = (~active) & (slack > 0)
        if not bad.any():
            return sol
        active |= bad
        signs[bad] = -np.sign(grad[bad])
    return None


def _kkt(x, g, pen):
    nonzero = x != 0
    r = np.where(
        nonzero,
        np.abs(g + pen * np.sign(x)),
        np.maximum(np.abs(g) - pen, 0.0),
    )
    return float(np.max(r)) if r.size else 0.0


@dataclass
class _Outcome:
    x: np.ndarray
    theta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt: float
    history: list = field(default_factory=list)
    message: str = ""


def _minimize(prob: _Reduced, x0, opts: SolverOptions) -> _Outcome:
    x = np.asarray(x0, dtype=float).copy()
    theta = prob.theta(x)
    chol = _cholesky(theta)
    if chol is None:
        raise SolverError("starting point is not positive definite")
    obj = prob.objective(x, theta, chol)
    history = [obj]
    eye = np.eye(theta.shape[0])
    stalls = 0
    polish = 0
    last_kkt = math.inf
    message = "iteration limit reached"
    converged = False
    kkt = math.inf
    it = 0
    for it in range(1, opts.max_iterations + 1):
        w = linalg.cho_solve((chol, True), eye)
        g = prob.gradient(w)
        kkt = _kkt(x, g, prob.pen)
        if stalls and kkt > 0.5 * last_kkt:
            stalls += 1
        elif stalls:
            stalls = 0
        if stalls >= 3 and not polish:
            converged = kkt <= 1e-6
            message = "objective stalled"
            it -= 1
            break
        last_kkt = kkt
        if kkt <= opts.kkt_tolerance:
            # a small gradient can still leave theta off by |theta|^2 times it on
            # ill-conditioned problems; a few Newton steps polish that away
            converged, message = True, "optimality conditions met"
            polish += 1
            if polish > 3:
                it -= 1
                break
        free = np.flatnonzero((x != 0) | (np.abs(g) >= prob.pen) | (prob.pen == 0))
        h = prob.hessian(w, free)
        xf = x[free]
        b = g[free] - _matvec(h)(xf)
        pen = prob.pen[free]
        z = _lasso_qp(h, b, pen, xf)
        exact = _refine_support(h, b, pen, z)
        if exact is not None:
            z = exact
        d = np.zeros_like(x)
        d[free] = z - xf
        direct = False
        if exact is not None:
            keep = (z != 0) | (pen == 0)
            if np.array_equal(keep, (xf != 0) | (pen == 0)) and np.all(
                np.sign(z[pen > 0]) == np.sign(xf[pen > 0])
            ):
                # same support and signs: solve for the step itself, which
                # avoids the cancellation in (x + d) - x near the optimum
                idx = np.flatnonzero(keep)
                step = _solve_sub(h, -(g[free][idx] + pen[idx] * np.sign(z[idx])), idx, len(b))
                if step is not None:
                    d[free[idx]] = step
                    direct = True
        if polish and np.max(np.abs(d), initial=0.0) <= 1e-13 * max(1.0, np.max(np.abs(x))):
            it -= 1
            break
        if direct:
            # signs are fixed along the step, so the penalty is linear in it
            decrease = float(g @ d + np.sum(prob.pen * np.sign(x) * d))
        else:
            decrease = float(g @ d + np.sum(prob.pen * (np.abs(x + d) - np.abs(x))))
        if not decrease < 0:
            if not polish:
                converged, message = kkt <= 1e-6, "no descent direction at working precision"
            break
        alpha = 1.0
        accepted = False
        for _ in range(60):
            x_try = x + alpha * d
            t_try = prob.theta(x_try)
            c_try = _cholesky(t_try)
            if c_try is not None:
                o_try = prob.objective(x_try, t_try, c_try)
                # rounding-level slack so steps near the optimum are not rejected
                if o_try <= obj + 1e-4 * alpha * decrease + 1e-13 * max(1.0, abs(obj)):
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            if not polish:
                converged, message = kkt <= 1e-6, "line search failed"
            break
        gain = obj - o_try
        x, theta, chol, obj = x_try, t_try, c_try, o_try
        history.append(obj)
        if np.max(np.abs(x)) > 1e10:
            message = "objective unbounded below (estimate diverging)"
            break
        if gain <= opts.objective_tolerance * max(1.0, abs(obj)):
            stalls = max(stalls, 1)
        else:
            stalls = 0
    else:
        w = linalg.cho_solve((chol, True), eye)
        kkt = _kkt(x, prob.gradient(w), prob.pen)
    return _Outcome(x, theta, obj, it, converged, kkt, history, message)


# --------------------------------------------------------------------------
# public estimators


def _check_inputs(cov: SampleCov, model: ColouredModel, index: GraphIndex | None):
    if index is None:
        raise ValueError("a GraphIndex is required")
    if cov.p != index.p:
        raise ValueError(f"covariance has p={cov.p} but the graph index has p={index.p}")
    if np.any(np.diag(cov.s) <= 0):
        raise SolverError("sample covariance has a non-positive variance")


def _penalty_vector(classes: ColourClasses, penalty: PenaltySpec):
    return penalty.lam * classes.weights * classes.penalized_mask(penalty.penalize_diagonal)


def _diagonal_start(classes: ColourClasses, s, penalty: PenaltySpec, scale=None):
    """Best diagonal-only coefficients; every other class starts at zero."""
    x = np.zeros(classes.n_c)
    for m, cls in enumerate(classes):
        if cls.is_diagonal:
            idx = [a for a, _ in cls.cells]
            k = len(idx)
            lam = penalty.lam if penalty.penalize_diagonal else 0.0
            x[m] = k / (float(np.sum(s[idx, idx])) + lam * k)
    return x


def _resolve(model, index, classes):
    if classes is None:
        classes = build_colour_classes(model, index)
    return classes


def fit_fgl_theta(
    cov: SampleCov,
    model: ColouredModel,
    penalty: PenaltySpec,
    opts: SolverOptions | None = None,
    *,
    index: GraphIndex | None = None,
    classes: ColourClasses | None = None,
    init=None,
) -> FitResult:
    """Constrained graphical lasso with equality constraints on the precision.

    ``index`` defaults to a single time point (``n_gamma = p``) when not given
    and ``classes`` is None. ``init`` warm-starts from coefficients of a
    previous fit on the same classes; infeasible starts fall back to the
    diagonal-only point.
    """
    opts = opts or SolverOptions()
    if classes is not None:
        index = classes.index
    elif index is None:
        index = GraphIndex(cov.p, 1)
    if model.target is not Target.THETA:
        raise ValueError("model targets omega; use fit_fgl_omega")
    _check_inputs(cov, model, index)
    classes = _resolve(model, index, classes)
    prob = _Reduced(cov.s, classes, _penalty_vector(classes, penalty))
    x0 = _diagonal_start(classes, cov.s, penalty)
    if init is not None and _cholesky(prob.theta(init)) is not None:
        x0 = np.asarray(init, dtype=float)
    out = _minimize(prob, x0, opts)
    if not out.converged:
        log.warning("theta fit did not converge: %s (kkt=%.3g)", out.message, out.kkt)
    return FitResult(
        theta_hat=out.theta,
        coeffs=out.x,
        lam=penalty.lam,
        objective=out.objective,
        iterations=out.iterations,
        converged=out.converged,
        classes=classes,
        penalty=penalty,
        target=Target.THETA,
        kkt=out.kkt,
        history=tuple(out.history),
        message=out.message,
        zero_threshold=opts.zero_threshold,
    )


def _omega_scale(classes: ColourClasses, sigma):
    rows, cols, _ = classes.cell_arrays
    return np.where(rows == cols, 1.0, sigma[rows] * sigma[cols])


def fit_fgl_omega(
    cov: SampleCov,
    model: ColouredModel,
    penalty: PenaltySpec,
    opts: SolverOptions | None = None,
    *,
    index: GraphIndex | None = None,
    classes: ColourClasses | None = None,
    init=None,
) -> FitResult:
    """Equality constraints on the scaled precision, by alternating updates.

    With the diagonal scale ``sigma`` fixed, off-diagonal cells of class m
    equal ``sigma_a * sigma_b * omega_m`` and diagonal classes hold the
    precision directly, so each sub-problem is the convex reduced problem
    with rescaled cells. ``sigma`` is then reset to ``sqrt(diag(theta))``
    and the procedure repeats until successive estimates differ by less
    than ``omega_outer_tolerance`` in entrywise l1 norm.

    The coefficients of the result are in scaled-precision units; the
    reported conditional correlation of class m is ``-coeffs[m]``.
    """
    opts = opts or SolverOptions()
    if classes is not None:
        index = classes.index
    elif index is None:
        index = GraphIndex(cov.p, 1)
    _check_inputs(cov, model, index)
    classes = _resolve(model, index, classes)
    pen = _penalty_vector(classes, penalty)
    x_diag = _diagonal_start(classes, cov.s, penalty)
    sigma = np.sqrt(np.diag(classes.assemble(x_diag)))
    x = x_diag if init is None else np.asarray(init, dtype=float)
    previous = None
    total = 0
    outer_converged = False
    out = None
    k = 0
    for k in range(1, opts.omega_outer_max + 1):
        prob = _Reduced(cov.s, classes, pen, _omega_scale(classes, sigma))
        start = x if _cholesky(prob.theta(x)) is not None else x_diag
        out = _minimize(prob, start, opts)
        total += out.iterations
        x = out.x
        if previous is not None:
            change = float(np.sum(np.abs(out.theta - previous)))
            if change < opts.omega_outer_tolerance:
                outer_converged = True
                break
        previous = out.theta
        sigma_next = np.sqrt(np.diag(out.theta))
        if k == opts.omega_outer_max:
            break
        sigma = sigma_next
    converged = outer_converged and out.converged
    message = out.message if outer_converged else "outer iteration limit reached"
    if not converged:
        log.warning("omega fit did not converge: %s", message)
    return FitResult(
        theta_hat=out.theta,
        coeffs=x,
        lam=penalty.lam,
        objective=out.objective,
        iterations=total,
        converged=converged,
        classes=classes,
        penalty=penalty,
        target=Target.OMEGA,
        sigma0=sigma,
        outer_iterations=k,
        kkt=out.kkt,
        history=tuple(out.history),
        message=message,
        zero_threshold=opts.zero_threshold,
    )


def fit(cov, model: ColouredModel, penalty: PenaltySpec, opts=None, **kwargs) -> FitResult:
    """Dispatch on ``model.target``."""
    if model.target is Target.OMEGA:
        return fit_fgl_omega(cov, model, penalty, opts, **kwargs)
    return fit_fgl_theta(cov, model, penalty, opts, **kwargs)


# --------------------------------------------------------------------------
# diagnostics


def _fit_scale(fit_result: FitResult, classes: ColourClasses):
    if fit_result.target is Target.OMEGA and fit_result.sigma0 is not None:
        return _omega_scale(classes, np.asarray(fit_result.sigma0))
    return None


def class_gradient(theta, cov: SampleCov, classes: ColourClasses, scale=None) -> np.ndarray:
    """Gradient of the smooth objective with respect to the class coefficients."""
    w = np.linalg.inv(np.asarray(theta, dtype=float))
    prob = _Reduced(cov.s, classes, np.zeros(classes.n_c), scale)
    return prob.gradient((w + w.T) / 2)


def kkt_residual(
    fit_result: FitResult, cov: SampleCov, penalty: PenaltySpec, classes: ColourClasses
) -> float:
    """Largest violation of the per-class subgradient optimality conditions."""
    g = class_gradient(fit_result.theta_hat, cov, classes, _fit_scale(fit_result, classes))
    return _kkt(np.asarray(fit_result.coeffs), g, _penalty_vector(classes, penalty))


def verify_constraints(fit_result: FitResult, cmap: ConstraintMap) -> float:
    """Largest absolute violation of the chained equalities and pinned zeros."""
    return cmap.violation(fit_result.theta_hat)

"""Independent reference computations for the test suite.

Nothing here imports the package: every oracle rebuilds its answer from the
definitions with plain loops or brute force.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

# factor names as used by the model DSL
FACTORS = ("0", "F1", "FT", "FGamma", "FGammaT")


def closed_form_count(factor: str, kind: str, lag: int, ng: int, nt: int) -> int:
    """The number-of-colours table, typed in directly."""
    if factor == "0":
        return 0
    if factor == "F1":
        return 1
    if factor == "FT":
        return nt - lag
    if factor == "FGamma":
        if kind == "S":
            return ng
        return ng * (ng - 1) // 2 if lag == 0 else ng * (ng - 1)
    if factor == "FGammaT":
        if kind == "S":
            return ng * (nt - lag)
        return ng * (ng - 1) * nt // 2 if lag == 0 else ng * (ng - 1) * (nt - lag)
    raise ValueError(factor)


def flat(j: int, t: int, ng: int) -> int:
    """Zero-based time-major position of vertex j at time t."""
    return t * ng + j


def partition_pairs(kind: str, lag: int, ng: int, nt: int):
    """((j, t), (k, t + lag)) vertex pairs of a natural partition, each unordered pair once."""
    out = []
    for t in range(nt - lag):
        for j in range(ng):
            for k in range(ng):
                if kind == "S" and j != k:
                    continue
                if kind == "N" and j == k:
                    continue
                if lag == 0 and k < j:
                    continue  # same time: keep each unordered pair once
                out.append(((j, t), (k, t + lag)))
    return out


def colour_key(factor: str, kind: str, lag: int, pair):
    (j, t), (k, _) = pair
    if factor == "F1":
        return ()
    if factor == "FT":
        return (t,)
    if factor == "FGamma":
        return (j, k)
    if factor == "FGammaT":
        return (j, k, t)
    raise ValueError(factor)


def enumerate_colours(factor: str, kind: str, lag: int, ng: int, nt: int) -> int:
    if factor == "0":
        return 0
    return len({colour_key(factor, kind, lag, pr) for pr in partition_pairs(kind, lag, ng, nt)})


def model_cells(model: dict, ng: int, nt: int):
    """Map ``{"S0": "F1", ...}`` to a list of classes, each a sorted list of (a, b) cells."""
    classes = {}
    for name, factor in model.items():
        if factor == "0":
            continue
        kind, lag = name[0], int(name[1:])
        if lag >= nt:
            continue
        for pr in partition_pairs(kind, lag, ng, nt):
            (j, t), (k, u) = pr
            a, b = sorted((flat(j, t, ng), flat(k, u, ng)))
            classes.setdefault((name, colour_key(factor, kind, lag, pr)), []).append((a, b))
    return [sorted(v) for _, v in sorted(classes.items())]


def penalised_objective(theta, s, lam, penalize_diagonal=False) -> float:
    """-logdet + tr(S theta) + lam * sum of |off-diagonal entries| (both triangles)."""
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return math.inf
    pen = np.abs(theta).sum()
    if not penalize_diagonal:
        pen -= np.abs(np.diag(theta)).sum()
    return -logdet + float(np.sum(s * theta)) + lam * pen


# --------------------------------------------------------------------------
# the 3 x 2 worked model: diagonal d, lag-0 network a (time 1) and b (time 2),
# self lag s; zero-based order ZNF-like vertices 0,1,2 at time 1 then 3,4,5.


def pattern_6x6(d, a, b, s):
    return np.array([
        [d, a, a, s, 0, 0],
        [a, d, a, 0, s, 0],
        [a, a, d, 0, 0, s],
        [s, 0, 0, d, b, b],
        [0, s, 0, b, d, b],
        [0, 0, s, b, b, d],
    ], dtype=float)


def _pattern_batch(x):
    d, a, b, s = (x[:, i] for i in range(4))
    m = np.zeros((len(x), 6, 6))
    for i in range(6):
        m[:, i, i] = d
    for i, j in ((0, 1), (0, 2), (1, 2)):
        m[:, i, j] = m[:, j, i] = a
        m[:, i + 3, j + 3] = m[:, j + 3, i + 3] = b
    for i in range(3):
        m[:, i, i + 3] = m[:, i + 3, i] = s
    return m


def pattern_objective_batch(x, s_mat, lam):
    """Objective of many parameter vectors at once; non-SPD points give +inf."""
    m = _pattern_batch(x)
    eig = np.linalg.eigvalsh(m)
    ok = eig[:, 0] > 0
    logdet = np.where(ok, np.log(np.where(ok[:, None], eig, 1.0)).sum(axis=1), 0.0)
    val = -logdet + np.einsum("ij,kij->k", s_mat, m)
    val += lam * (6 * np.abs(x[:, 1]) + 6 * np.abs(x[:, 2]) + 6 * np.abs(x[:, 3]))
    val[~ok] = np.inf
    return val


def nested_grid_minimise(f_batch, centre, half_width, points=5, shrink=0.5, tol=1e-10,
                         max_rounds=4000):
    """Derivative-free minimisation by repeated grid refinement.

    A full tensor grid of ``points`` per axis is laid over the box; the box is
    recentred on the best point and shrunk, except when the best point sits on
    the boundary, in which case it only moves. Ends when the box is narrower
    than ``tol``.
    """
    centre = np.asarray(centre, dtype=float)
    hw = np.full(centre.shape, float(half_width)) if np.isscalar(half_width) else np.asarray(half_width, float)
    offsets = np.linspace(-1.0, 1.0, points)
    mesh = np.array(list(itertools.product(range(points), repeat=len(centre))))
    best_val = f_batch(centre[None, :])[0]
    for _ in range(max_rounds):
        grid = centre + offsets[mesh] * hw
        vals = f_batch(grid)
        i = int(np.argmin(vals))
        if vals[i] <= best_val:
            best_val = vals[i]
            centre = grid[i]
        on_edge = (mesh[i] == 0) | (mesh[i] == points - 1)
        hw = np.where(on_edge, hw, hw * shrink)
        if np.all(hw < tol):
            break
    return centre, best_val


def grid_oracle_6x6(s_mat, lam):
    """Optimal (d, a, b, s) and objective of the worked model by nested grids."""
    d0 = 6.0 / np.trace(s_mat)
    x, val = nested_grid_minimise(lambda x: pattern_objective_batch(x, s_mat, lam),
                                  [d0, 0.0, 0.0, 0.0], 0.5 * d0)
    # restart from a wider box around the answer until nothing improves
    for _ in range(5):
        x2, val2 = nested_grid_minimise(lambda x: pattern_objective_batch(x, s_mat, lam),
                                        x, 0.05 * d0)
        if val2 >= val - 1e-14:
            break
        x, val = x2, val2
    return x, val


# --------------------------------------------------------------------------


def random_spd(rng, p, n=None, scale_spread=1.0):
    """Sample covariance (divisor n) of n Gaussian rows with a random correlated truth."""
    n = n or 3 * p
    a = rng.standard_normal((p, p))
    cov = a @ a.T / p + 0.5 * np.eye(p)
    scales = np.exp(scale_spread * rng.uniform(-0.5, 0.5, p))
    cov = cov * np.outer(scales, scales)
    x = rng.multivariate_normal(np.zeros(p), cov, size=n)
    x -= x.mean(axis=0)
    s = x.T @ x / n
    return (s + s.T) / 2


def dense_class_gradient(theta, s, classes_cells):
    """Per-class derivative of -logdet + tr(S theta) by summing over cells of both triangles."""
    w = np.linalg.inv(theta)
    out = []
    for cells in classes_cells:
        g = 0.0
        for a, b in cells:
            g += (s[a, b] - w[a, b]) * (1 if a == b else 2)
        out.append(g)
    return np.array(out)


def confusion_by_hand(truth, est, thr=1e-8):
    p = truth.shape[0]
    tp = fp = tn = fn = 0
    for i in range(p):
        for j in range(i + 1, p):
            t = abs(truth[i, j]) > thr
            e = abs(est[i, j]) > thr
            tp += t and e
            fn += t and not e
            fp += (not t) and e
            tn += (not t) and (not e)
    return tp, fp, tn, fn

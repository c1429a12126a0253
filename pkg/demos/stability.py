"""
Stability selection
===================

Edge frequencies over half-size subsamples, thresholded so that the
expected number of false edges stays below v. The chain below has 9
edges, so v = 2 keeps q^2 <= v k possible.
"""

import numpy as np

from fglasso import GraphIndex, SampleCov, expected_fp_bound, lambda_bounds, stability_selection, unconstrained_model

p, n = 10, 200
idx = GraphIndex(p, 1)
model = unconstrained_model(1)

# a chain: each variable talks to its neighbour
theta = np.eye(p) + np.diag(np.full(p - 1, 0.4), 1) + np.diag(np.full(p - 1, 0.4), -1)
x = np.random.default_rng(3).multivariate_normal(np.zeros(p), np.linalg.inv(theta), size=n)

lo, hi = lambda_bounds(SampleCov.from_data(x))
res = stability_selection(x, model, lam=0.5 * hi, subsamples=100, v=2.0, seed=0, index=idx)
print(f"q={res.q:.2f} k={res.k} pi_thr={res.pi_threshold:.3f} bound={res.fp_bound:.3f}")
print("stable edges:", sorted(res.stable_edges))
print("chain edges recovered:", sum((i, i + 1) in res.stable_edges for i in range(p - 1)), "of", p - 1)

# on independent columns almost nothing survives
z = np.random.default_rng(4).standard_normal((n, p))
_, u = lambda_bounds(SampleCov.from_data(z))
null = stability_selection(z, model, lam=u, subsamples=100, v=1.0, seed=0, index=idx)
print("null stable edges:", sorted(null.stable_edges))
print("bound check:", expected_fp_bound(null.q, null.k, null.pi_threshold))

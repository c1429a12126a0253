"""
Structure recovery benchmark
============================

Coloured lasso against the plain graphical lasso on simulated dynamic
networks, for each information criterion. Small by default; pass a number
of replications on the command line for a longer run.
"""

import sys

from fglasso import Scenario, run_benchmark

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 3
table = run_benchmark([Scenario(g=8, g_star=0, t=3, n=50, seed=0)], replications=reps, seed=0)

print(f"{'method':8s} {'crit':5s} {'FP':>6s} {'FN':>6s} {'FD':>6s}")
for r in table.rows:
    print(f"{r.method:8s} {r.criterion:5s} {r.fp_rate:6.3f} {r.fn_rate:6.3f} {r.fd_rate:6.3f}")

"""
Coloured graphs for time-course data
====================================

Four genes measured at two time points give an 8 x 8 precision matrix.
A factorial model ties groups of its entries together; this script shows
how the groups (colours) look for a few models.
"""

import numpy as np

from fglasso import GraphIndex, build_colour_classes, build_constraints, decompose_empirical, parse_model

idx = GraphIndex(n_gamma=4, n_t=2)
print("p =", idx.p)

# one colour each for the diagonal, the lag-0 network and the lag-1 self links
model = parse_model("S0=F1 N0=F1 S1=F1")
classes = build_colour_classes(model, idx)
print(model, "->", classes.n_c, "colours")

# draw the colour id of every cell; -1 marks a structural zero
board = -np.ones((idx.p, idx.p), dtype=int)
for m, cls in enumerate(classes):
    for a, b in cls.cells:
        board[a, b] = board[b, a] = m
print(board)

# letting the network vary by time splits N0 in two
for text in ("S0=F1 N0=FT S1=F1", "S0=FGamma N0=FGamma S1=FGamma", "S0=FGammaT N0=FGammaT S1=FGammaT N1=FGammaT"):
    print(f"{text:45s} {build_colour_classes(parse_model(text), idx).n_c:3d} colours")

# equalities as chained differences: one fewer than cells in each class
cmap = build_constraints(classes)
print("constraints:", len(cmap.constraints))

# any matrix splits into its natural partitions, and the pieces add back up
rng = np.random.default_rng(0)
m = rng.standard_normal((idx.p, idx.p))
m = m + m.T
parts = decompose_empirical(m, idx)
print(sorted(parts), np.allclose(sum(parts.values()), m))

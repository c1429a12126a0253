"""Dynamic graphs, natural partitions and factorial edge colourings.

Vertices of a dynamic graph are (natural vertex, time point) pairs. They are
laid out time-major, so flat index ``t * n_gamma + j`` holds natural vertex
``j`` at time ``t`` (both zero based). All matrix cells are stored once, as
upper-triangular pairs ``(a, b)`` with ``a <= b``.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Factor",
    "Target",
    "ClassKind",
    "GraphIndex",
    "ColouredModel",
    "ColourClass",
    "ColourClasses",
    "ConstraintMap",
    "natural_partitions",
    "colour_count",
    "build_colour_classes",
    "build_constraints",
    "decompose_empirical",
    "density",
    "parse_model",
    "unconstrained_model",
]


class Factor(enum.Enum):
    ZERO = "0"
    F1 = "F1"
    FT = "FT"
    FGAMMA = "FGamma"
    FGAMMAT = "FGammaT"

    @classmethod
    def parse(cls, name: str) -> "Factor":
        key = name.strip().lower()
        for f in cls:
            if f.value.lower() == key:
                return f
        raise ValueError(
            f"unknown factor {name!r}; expected one of F1, FT, FGamma, FGammaT, 0"
        )


class Target(enum.Enum):
    THETA = "theta"
    OMEGA = "omega"


class ClassKind(enum.Enum):
    DIAGONAL = "diagonal"
    SELF = "self"
    NETWORK = "network"


@dataclass(frozen=True)
class GraphIndex:
    """Index set of a dynamic graph with ``n_gamma`` natural vertices
    observed at ``n_t`` time points."""

    n_gamma: int
    n_t: int

    def __post_init__(self):
        if self.n_gamma < 1 or self.n_t < 1:
            raise ValueError("n_gamma and n_t must both be >= 1")

    @property
    def p(self) -> int:
        return self.n_gamma * self.n_t

    def vertex_of(self, j: int, t: int) -> int:
        if not (0 <= j < self.n_gamma and 0 <= t < self.n_t):
            raise IndexError(f"vertex ({j}, {t}) outside the index")
        return t * self.n_gamma + j

    def decode(self, a: int) -> tuple[int, int]:
        """Inverse of :meth:`vertex_of`: flat index -> (j, t)."""
        if not 0 <= a < self.p:
            raise IndexError(f"flat index {a} outside 0..{self.p - 1}")
        return a % self.n_gamma, a // self.n_gamma


def natural_partitions(index: GraphIndex, lag: int):
    """Cells of the natural partitions ``S_lag`` and ``N_lag``.

    ``S_lag`` pairs each natural vertex with itself ``lag`` time steps later
    (the diagonal when ``lag == 0``); ``N_lag`` pairs distinct natural
    vertices ``lag`` steps apart. Both come back as lists of upper-triangular
    cells; a lag beyond the horizon yields two empty lists.
    """
    if lag < 0:
        raise ValueError("lag must be non-negative")
    s_cells, n_cells = [], []
    g = index.n_gamma
    for t in range(index.n_t - lag):
        for j in range(g):
            s_cells.append((index.vertex_of(j, t), index.vertex_of(j, t + lag)))
        if lag == 0:
            for j in range(g):
                for k in range(j + 1, g):
                    n_cells.append((index.vertex_of(j, t), index.vertex_of(k, t)))
        else:
            for j in range(g):
                for k in range(g):
                    if j != k:
                        n_cells.append(
                            (index.vertex_of(j, t), index.vertex_of(k, t + lag))
                        )
    return s_cells, n_cells


def colour_count(factor: Factor, kind: ClassKind, lag: int, index: GraphIndex) -> int:
    """Closed-form number of colours a factor induces on one natural partition.

    ``kind`` is ``SELF`` for ``S_lag`` (the diagonal at lag 0; ``DIAGONAL`` is
    accepted as an alias) and ``NETWORK`` for ``N_lag``.
    """
    if not 0 <= lag < index.n_t:
        raise ValueError(f"lag {lag} outside 0..{index.n_t - 1}")
    g, n_t = index.n_gamma, index.n_t
    if kind is ClassKind.DIAGONAL:
        kind = ClassKind.SELF
    if factor is Factor.ZERO:
        return 0
    if kind is ClassKind.NETWORK:
        if g < 2:
            # N_i has no cells with a single natural vertex.
            return 0
        pairs = g * (g - 1) // 2 if lag == 0 else g * (g - 1)
    else:
        pairs = g
    if factor is Factor.F1:
        return 1
    if factor is Factor.FT:
        return n_t - lag
    if factor is Factor.FGAMMA:
        return pairs
    return pairs * (n_t - lag)


# --------------------------------------------------------------------------
# models


_TOKEN = re.compile(r"^([SN])(\d+)\s*=\s*(\S+)$", re.IGNORECASE)


@dataclass(frozen=True)
class ColouredModel:
    """Factor assignment for every natural partition ``S_i`` and ``N_i``.

    Lags past the end of ``s_factors``/``n_factors`` are ``ZERO``. Trailing
    ``ZERO`` entries are dropped so that equal models compare equal.
    """

    s_factors: tuple = (Factor.F1,)
    n_factors: tuple = ()
    target: Target = Target.THETA

    def __post_init__(self):
        s = _strip_zeros(tuple(self.s_factors))
        n = _strip_zeros(tuple(self.n_factors))
        object.__setattr__(self, "s_factors", s)
        object.__setattr__(self, "n_factors", n)
        if not s or s[0] is Factor.ZERO:
            raise ValueError("S0 must be modelled: the diagonal cannot be ZERO")
        if not isinstance(self.target, Target):
            object.__setattr__(self, "target", Target(self.target))

    def s_factor(self, lag: int) -> Factor:
        return self.s_factors[lag] if lag < len(self.s_factors) else Factor.ZERO

    def n_factor(self, lag: int) -> Factor:
        return self.n_factors[lag] if lag < len(self.n_factors) else Factor.ZERO

    @property
    def max_lag(self) -> int:
        return max(len(self.s_factors), len(self.n_factors)) - 1

    @classmethod
    def from_dsl(cls, text: str) -> "ColouredModel":
        return parse_model(text)

    def to_dsl(self) -> str:
        tokens = []
        for lag in range(self.max_lag + 1):
            tokens.append(f"S{lag}={self.s_factor(lag).value}")
            tokens.append(f"N{lag}={self.n_factor(lag).value}")
        if self.target is Target.OMEGA:
            tokens.append("target=omega")
        return " ".join(tokens)

    def __str__(self) -> str:
        return self.to_dsl()


def _strip_zeros(factors: tuple) -> tuple:
    factors = tuple(f if isinstance(f, Factor) else Factor.parse(str(f)) for f in factors)
    end = len(factors)
    while end > 0 and factors[end - 1] is Factor.ZERO:
        end -= 1
    return factors[:end]


def parse_model(text: str) -> ColouredModel:
    """Parse the model mini-language, e.g. ``"S0=F1 N0=FGamma S1=F1 N1=0"``.

    Tokens are separated by whitespace or commas. Unlisted partitions are
    ``0``; an optional ``target=theta|omega`` token selects the target.
    """
    s, n = {}, {}
    target = Target.THETA
    for token in re.split(r"[\s,]+", text.strip()):
        if not token:
            continue
        if token.lower().startswith("target="):
            value = token.split("=", 1)[1].lower()
            try:
                target = Target(value)
            except ValueError:
                raise ValueError(f"unknown target {value!r}; use theta or omega") from None
            continue
        m = _TOKEN.match(token)
        if m is None:
            raise ValueError(f"cannot parse model token {token!r}")
        part, lag, factor = m.group(1).upper(), int(m.group(2)), Factor.parse(m.group(3))
        table = s if part == "S" else n
        if lag in table:
            raise ValueError(f"partition {part}{lag} assigned twice")
        table[lag] = factor

    def as_tuple(table):
        if not table:
            return ()
        return tuple(table.get(i, Factor.ZERO) for i in range(max(table) + 1))

    return ColouredModel(as_tuple(s), as_tuple(n), target)


# --------------------------------------------------------------------------
# colour classes


@dataclass(frozen=True)
class ColourClass:
    kind: ClassKind
    lag: int
    factor: Factor
    key: tuple
    cells: tuple

    @property
    def partition(self) -> str:
        return f"{'N' if self.kind is ClassKind.NETWORK else 'S'}{self.lag}"

    @property
    def n_diagonal(self) -> int:
        return sum(1 for a, b in self.cells if a == b)

    @property
    def n_offdiagonal(self) -> int:
        return len(self.cells) - self.n_diagonal

    @property
    def weight(self) -> int:
        """Number of matrix entries (both triangles) carrying the colour."""
        return 2 * self.n_offdiagonal + self.n_diagonal

    @property
    def is_diagonal(self) -> bool:
        return self.kind is ClassKind.DIAGONAL


def _colour_key(factor: Factor, kind: ClassKind, lag: int, j: int, k: int, t: int):
    if factor is Factor.F1:
        return ()
    if factor is Factor.FT:
        return (t,)
    if kind is ClassKind.NETWORK:
        vertices = (min(j, k), max(j, k)) if lag == 0 else (j, k)
    else:
        vertices = (j,)
    if factor is Factor.FGAMMA:
        return vertices
    return vertices + (t,)


def partition_classes(index: GraphIndex, kind: ClassKind, lag: int, factor: Factor):
    """Colour classes one factor induces on one natural partition."""
    if factor is Factor.ZERO or lag >= index.n_t:
        return []
    if kind is ClassKind.DIAGONAL:
        kind = ClassKind.SELF
    s_cells, n_cells = natural_partitions(index, lag)
    cells = n_cells if kind is ClassKind.NETWORK else s_cells
    out_kind = ClassKind.DIAGONAL if (kind is ClassKind.SELF and lag == 0) else kind
    groups: dict = {}
    for a, b in cells:
        j, t = index.decode(a)
        k, _ = index.decode(b)
        key = _colour_key(factor, kind, lag, j, k, t)
        groups.setdefault(key, []).append((a, b) if a <= b else (b, a))
    return [
        ColourClass(out_kind, lag, factor, key, tuple(sorted(groups[key])))
        for key in sorted(groups)
    ]


class ColourClasses:
    """Partition of matrix cells into equality classes.

    Each class is the index-set form of a 0/1 design matrix. Upper-triangular
    cells not covered by any class are structural zeros.
    """

    def __init__(self, classes, index: GraphIndex, model: ColouredModel | None = None):
        self.classes = tuple(classes)
        self.index = index
        self.model = model

    def __len__(self):
        return len(self.classes)

    def __iter__(self):
        return iter(self.classes)

    def __getitem__(self, m):
        return self.classes[m]

    @property
    def n_c(self) -> int:
        return len(self.classes)

    @cached_property
    def cell_arrays(self):
        """``(rows, cols, class_id)`` over every classed upper-triangular cell."""
        rows, cols, ids = [], [], []
        for m, cls in enumerate(self.classes):
            for a, b in cls.cells:
                rows.append(a)
                cols.append(b)
                ids.append(m)
        return (
            np.asarray(rows, dtype=np.intp),
            np.asarray(cols, dtype=np.intp),
            np.asarray(ids, dtype=np.intp),
        )

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.classes], dtype=float)

    @cached_property
    def diagonal_mask(self) -> np.ndarray:
        return np.array([c.is_diagonal for c in self.classes], dtype=bool)

    def penalized_mask(self, penalize_diagonal: bool = False) -> np.ndarray:
        if penalize_diagonal:
            return np.ones(self.n_c, dtype=bool)
        return ~self.diagonal_mask

    @cached_property
    def zero_cells(self) -> tuple:
        p = self.index.p
        covered = np.zeros((p, p), dtype=bool)
        rows, cols, _ = self.cell_arrays
        covered[rows, cols] = True
        a, b = np.triu_indices(p)
        keep = ~covered[a, b]
        return tuple(zip(a[keep].tolist(), b[keep].tolist()))

    def design_matrix(self, m: int) -> np.ndarray:
        p = self.index.p
        x = np.zeros((p, p))
        for a, b in self.classes[m].cells:
            x[a, b] = x[b, a] = 1.0
        return x

    def assemble(self, coeffs, scale=None) -> np.ndarray:
        """Symmetric matrix with value ``coeffs[m]`` on every cell of class m.

        ``scale`` optionally multiplies each cell (same order as
        :attr:`cell_arrays`).
        """
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.n_c,):
            raise ValueError(f"expected {self.n_c} coefficients, got {coeffs.shape}")
        rows, cols, ids = self.cell_arrays
        vals = coeffs[ids] if scale is None else coeffs[ids] * scale
        out = np.zeros((self.index.p, self.index.p))
        out[rows, cols] = vals
        out[cols, rows] = vals
        return out

    def class_edges(self, m: int) -> list:
        """Off-diagonal cells of class m, i.e. the graph edges it colours."""
        return [(a, b) for a, b in self.classes[m].cells if a != b]


def build_colour_classes(model: ColouredModel, index: GraphIndex) -> ColourClasses:
    """Realise every factor of ``model`` on ``index``.

    Classes are ordered by lag, ``S`` before ``N``, then by colour key.
    """
    classes = []
    for lag in range(index.n_t):
        classes += partition_classes(index, ClassKind.SELF, lag, model.s_factor(lag))
        classes += partition_classes(index, ClassKind.NETWORK, lag, model.n_factor(lag))
    return ColourClasses(classes, index, model)


# --------------------------------------------------------------------------
# linear constraint map


@dataclass(frozen=True)
class ConstraintMap:
    """Chained pairwise equalities ``theta[a] - theta[b] = 0``.

    ``zero_cells`` are the structural zeros; they are pinned rather than
    chained, but :meth:`violation` reports them too.
    """

    constraints: tuple
    zero_cells: tuple = ()

    @property
    def n_p(self) -> int:
        return len(self.constraints)

    def apply(self, theta: np.ndarray) -> np.ndarray:
        if not self.constraints:
            return np.zeros(0)
        c = np.asarray(self.constraints, dtype=np.intp)
        return theta[c[:, 0], c[:, 1]] - theta[c[:, 2], c[:, 3]]

    def violation(self, theta: np.ndarray) -> float:
        worst = 0.0
        diffs = self.apply(np.asarray(theta, dtype=float))
        if diffs.size:
            worst = float(np.max(np.abs(diffs)))
        if self.zero_cells:
            z = np.asarray(self.zero_cells, dtype=np.intp)
            worst = max(worst, float(np.max(np.abs(theta[z[:, 0], z[:, 1]]))))
        return worst

    def matrices(self, p: int) -> list:
        """Dense ``A_i`` with +1 at the earlier and -1 at the later cell."""
        out = []
        for a, b, c, d in self.constraints:
            m = np.zeros((p, p))
            m[a, b] = 1.0
            m[c, d] = -1.0
            out.append(m)
        return out


def build_constraints(classes: ColourClasses) -> ConstraintMap:
    rows = []
    for cls in classes:
        cells = sorted(cls.cells)
        for (a, b), (c, d) in zip(cells, cells[1:]):
            rows.append((a, b, c, d))
    return ConstraintMap(tuple(rows), classes.zero_cells)


# --------------------------------------------------------------------------
# empirical matrices


def decompose_empirical(M, index: GraphIndex) -> dict:
    """Split a symmetric matrix into its natural-partition parts.

    Returns ``{"S0": ..., "N0": ..., "S1": ...}`` with one masked copy per
    partition; the parts sum to ``M`` exactly.
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (index.p, index.p):
        raise ValueError(f"matrix shape {M.shape} does not match p={index.p}")
    parts = {}
    for lag in range(index.n_t):
        for name, cells in zip(("S", "N"), natural_partitions(index, lag)):
            part = np.zeros_like(M)
            if cells:
                c = np.asarray(cells, dtype=np.intp)
                part[c[:, 0], c[:, 1]] = M[c[:, 0], c[:, 1]]
                part[c[:, 1], c[:, 0]] = M[c[:, 1], c[:, 0]]
            parts[f"{name}{lag}"] = part
    return parts


def density(edge_count: int, p: int) -> float:
    """Edge density of an undirected graph on ``p`` vertices."""
    max_edges = p * (p - 1) // 2
    if not 0 <= edge_count <= max_edges:
        raise ValueError(f"edge count {edge_count} outside 0..{max_edges}")
    if max_edges == 0:
        return 0.0
    return edge_count / max_edges


def unconstrained_model(n_t: int, target: Target = Target.THETA) -> ColouredModel:
    """Every partition free (``FGammaT``): the plain graphical lasso."""
    free = (Factor.FGAMMAT,) * n_t
    return ColouredModel(free, free, target)

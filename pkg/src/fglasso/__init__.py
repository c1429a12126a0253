"""Factorial graphical lasso for dynamic networks.

Edge-coloured Gaussian graphical models on a grid of natural vertices observed
over time, fitted by an l1-penalised log-determinant program with equality
constraints between edges of the same colour.
"""
from .coloured_graph import *  # noqa: F401,F403
from .coloured_graph import __all__ as _graph_all
from .io import *  # noqa: F401,F403
from .io import __all__ as _io_all
from .model_selection import *  # noqa: F401,F403
from .model_selection import __all__ as _selection_all
from .simulation import *  # noqa: F401,F403
from .simulation import __all__ as _simulation_all
from .solver import *  # noqa: F401,F403
from .solver import __all__ as _solver_all

__version__ = "0.1.0"

__all__ = [*_graph_all, *_solver_all, *_selection_all, *_simulation_all, *_io_all]

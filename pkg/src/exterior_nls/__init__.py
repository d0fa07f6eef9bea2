"""Focusing nonlinear Schrodinger equation outside a convex obstacle.

Submodules: ``geometry`` (cut-cell grid), ``ground_state``, ``field``,
``evolution`` (Crank-Nicolson flow and blow-up detection), ``virial``,
``criteria`` and ``cli``.
"""

from .errors import ExteriorNLSError, InvalidInputError
from .evolution import run
from .field import ComplexField, SymmetryClass
from .geometry import ball, build_grid, ellipsoid
from .ground_state import solve_ground_state

__version__ = "0.1.0"

__all__ = [
    "ComplexField",
    "ExteriorNLSError",
    "InvalidInputError",
    "SymmetryClass",
    "ball",
    "build_grid",
    "ellipsoid",
    "run",
    "solve_ground_state",
]

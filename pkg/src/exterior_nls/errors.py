"""Exception hierarchy shared by every module of the toolkit."""


class ExteriorNLSError(Exception):
    """Base class for all errors raised by :mod:`exterior_nls`."""


class InvalidInputError(ExteriorNLSError, ValueError):
    """A parameter or argument violates a documented precondition."""


class GeometryError(ExteriorNLSError):
    """The obstacle / truncation geometry is inconsistent."""


class ResolutionError(GeometryError):
    """The grid spacing is too coarse for the requested geometry."""


class SolverFailure(ExteriorNLSError):
    """An iterative numerical procedure did not converge."""


class ConsistencyError(ExteriorNLSError):
    """Two independent evaluations of the same quantity disagree."""


class SymmetryError(InvalidInputError):
    """A field or grid lacks a reflection symmetry required by an operation."""

from .linalg import ConvergenceError


class AdmissibilityError(ValueError):
    """Input violates a model constraint (bounds, support, geometry)."""


class GridMismatchError(ValueError):
    """Two objects were built on incompatible grids or sampling lattices."""


class DivergenceError(RuntimeError):
    """The fixed-point iteration started to diverge; ``trace`` holds the history."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


__all__ = ["AdmissibilityError", "ConvergenceError", "DivergenceError", "GridMismatchError"]

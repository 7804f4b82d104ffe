"""Exception types raised by the solver stack."""


class InvalidArgumentError(ValueError):
    pass


class DegenerateGeometryError(ValueError):
    """Raised when a geometric map has a non-positive Jacobian determinant."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class CondensationError(RuntimeError):
    """A cell-local saddle block could not be factored."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class SingularMatrixError(RuntimeError):
    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SolverAccuracyError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual

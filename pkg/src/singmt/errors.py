"""Exception hierarchy shared by all modules."""


class SingMTError(Exception):
    """Base class for toolkit errors."""


class InvalidInputError(SingMTError, ValueError):
    pass


class InvalidOrderError(InvalidInputError):
    """A conical order alpha <= -1 (or outside a supported range)."""


class GeometryError(InvalidInputError):
    pass


class UnsupportedGeometryError(GeometryError):
    pass


class MonotonicityError(InvalidInputError):
    pass


class DegenerateInputError(InvalidInputError):
    pass


class ScaleError(InvalidInputError):
    pass


class InvalidWeightError(InvalidInputError):
    pass


class RegimeError(InvalidInputError):
    """Parameters outside the regime an operation is defined for."""


class ConvergenceError(SingMTError, RuntimeError):
    """Iterative method did not converge; carries diagnostics and the last iterate."""

    def __init__(self, message, diagnostics=None, last=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
        self.last = last


class SchemaError(InvalidInputError):
    """Malformed experiment configuration; ``path`` locates the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path

"""Exception types shared across the package."""


class DimensionError(ValueError):
    """A point or parameter vector has the wrong length."""


class DomainError(ValueError):
    """An input lies outside the domain where an operation is defined."""


class SingularPropagatorError(DomainError):
    """The complex Gaussian propagator was requested at a zero time product."""


class FootprintError(DomainError):
    """A finite-difference stencil would leave the admissible domain."""


class AccuracyError(RuntimeError):
    """Quadrature refinement did not meet the requested tolerance.

    The last two refinement values are kept so callers can report them.
    """

    def __init__(self, message, coarse, fine):
        super().__init__(message)
        self.coarse = coarse
        self.fine = fine

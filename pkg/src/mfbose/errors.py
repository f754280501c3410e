"""Exception hierarchy and the CLI exit code attached to each family."""


class MfboseError(Exception):
    exit_code = 1


class ValidationError(MfboseError, ValueError):
    """Bad input: configuration, potential, observable or basis request."""

    exit_code = 2


class NegativeCoefficient(ValidationError):
    pass


class AsymmetricCoefficient(ValidationError):
    pass


class NonHermitian(ValidationError):
    pass


class DimensionOverflow(ValidationError):
    pass


class SolverError(MfboseError, RuntimeError):
    exit_code = 3


class NoConvergence(SolverError):
    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class BreakdownWithoutConvergence(SolverError):
    pass


class IdentityAssertionError(MfboseError, AssertionError):
    """A matrix identity or exact inequality failed beyond its tolerance."""

    exit_code = 4

    def __init__(self, name, residual, tolerance):
        super().__init__(f"{name}: residual {residual:.3e} exceeds tolerance {tolerance:.1e}")
        self.name = name
        self.residual = residual
        self.tolerance = tolerance


class CapTooSmall(UserWarning):
    """The per-mode occupation cap discards more than the allowed tail mass."""

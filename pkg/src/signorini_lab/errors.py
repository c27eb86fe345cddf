"""Exception types shared across the package."""


class SignoriniLabError(Exception):
    """Base class for all errors raised by signorini_lab."""


class GridError(SignoriniLabError, ValueError):
    pass


class EvenResolution(GridError):
    pass


class ResolutionTooSmall(GridError):
    pass


class NonFiniteField(SignoriniLabError, ValueError):
    pass


class OutsideDomain(SignoriniLabError, ValueError):
    pass


class InadmissibleBall(SignoriniLabError, ValueError):
    pass


class InadmissibleBoundary(SignoriniLabError, ValueError):
    pass


class NonConvergence(SignoriniLabError, RuntimeError):
    """Sweep budget exhausted before both tolerances were met.

    The partially converged field and the diagnostics are attached so that
    callers (the CLI in particular) can still write them out.
    """

    def __init__(self, message, diagnostics=None, field=None):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.field = field


class DegenerateBoundaryMass(SignoriniLabError, ArithmeticError):
    pass


class DegenerateField(SignoriniLabError, ValueError):
    pass


class DomainExceeded(SignoriniLabError, ValueError):
    pass


class NotInQ(SignoriniLabError, ValueError):
    """Polynomial is negative somewhere on the thin unit sphere."""


class NotRegularSeed(SignoriniLabError, ValueError):
    pass


class NoCrossingInWindow(SignoriniLabError, ValueError):
    pass


class NotSingularFit(SignoriniLabError, ValueError):
    pass


class ConfigError(SignoriniLabError, ValueError):
    pass

"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the domain where the quantity exists."""


class EvaluationError(ArithmeticError):
    """A numerical evaluation produced a non-finite value."""


class NoBracketError(RuntimeError):
    """Bracket expansion for the critical search hit its bound."""


class CouplingTooLargeError(RuntimeError):
    """The quartic coupling left the perturbative regime on both bracket ends."""


class ConvergenceError(RuntimeError):
    """An iteration did not converge before its scale cap."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class CapacityError(ValueError):
    """Exhaustive enumeration would exceed the configured size cap."""


class PreconditionError(ValueError):
    """Inputs violate a documented precondition."""


class FitError(RuntimeError):
    """A curve fit was requested on data that cannot support it."""

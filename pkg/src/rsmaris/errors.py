"""Exception hierarchy shared by all modules."""


class RsmarisError(Exception):
    """Base class for all package errors."""


class ValidationError(RsmarisError, ValueError):
    """A configuration field violates its invariant."""

    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class DomainError(RsmarisError, ValueError):
    pass


class SingularityError(RsmarisError, ArithmeticError):
    pass


class GeometryError(RsmarisError, ValueError):
    pass


class DegenerateExpansionError(RsmarisError, ArithmeticError):
    """Surrogate requested at a point with (numerically) zero dispersion."""


class InfeasibleError(RsmarisError):
    pass


class InfeasibleStartError(InfeasibleError):
    pass


class NumericalError(RsmarisError, ArithmeticError):
    pass


class NonmonotoneError(RsmarisError):
    """The Dinkelbach parameter decreased, which indicates a solver defect."""

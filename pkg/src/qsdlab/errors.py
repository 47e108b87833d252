"""Exception types shared across the package."""


class QsdError(Exception):
    """Base class for all qsdlab errors."""


class InvalidArgument(QsdError, ValueError):
    """Shapes or values that cannot be used together."""


class ContractViolation(QsdError, ValueError):
    """A precondition such as normalization does not hold."""


class DegenerateStateError(QsdError, ArithmeticError):
    """State norm collapsed below the usable threshold."""


class OracleInstabilityError(QsdError, ArithmeticError):
    """The master-equation integrator produced a non-positive density matrix."""


class NumericFailure(QsdError, ArithmeticError):
    """A trajectory or co-integration failed; carries the failing time."""

    def __init__(self, message, t=None, stream_id=None):
        super().__init__(message)
        self.t = t
        self.stream_id = stream_id

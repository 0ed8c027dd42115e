"""Exception hierarchy shared across modules."""


class SubriemError(Exception):
    """Base class for library errors."""


class StructureError(SubriemError, ValueError):
    """Dimension mismatch or malformed group data."""


class DomainError(SubriemError, ValueError):
    """Argument outside the operation's domain."""


class NumericError(SubriemError, ArithmeticError):
    """Non-finite evaluation."""


class UnsupportedStructureError(SubriemError):
    pass


class SolverError(SubriemError, RuntimeError):
    """Root finder or optimizer failed; ``state`` carries the last bracket."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


class InfeasibleError(SubriemError, RuntimeError):
    pass


class TuningError(SubriemError, RuntimeError):
    def __init__(self, msg, suggested_scale=None):
        super().__init__(msg)
        self.suggested_scale = suggested_scale


class DegenerateError(SubriemError, ValueError):
    pass


class RefusedError(SubriemError):
    """The request is outside what can be honestly reported (e.g. corpus too small)."""


class IntegrabilityError(SubriemError, ArithmeticError):
    pass


class TruncationError(SubriemError, RuntimeError):
    pass


class ConfigError(SubriemError, ValueError):
    pass

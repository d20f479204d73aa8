"""Exception types raised across the package.

Validation problems derive from :class:`ValidationError` (CLI exit status 2);
numerical trouble in the LP layer derives from :class:`SolverFailure`
(exit status 3).
"""


class KmotError(Exception):
    """Base class for all package errors."""


class ValidationError(KmotError, ValueError):
    """Input data or configuration violates a documented precondition."""


class UnknownSupportPoint(ValidationError):
    pass


class EmptySample(ValidationError):
    pass


class InvalidSize(ValidationError):
    pass


class SupportMismatch(ValidationError):
    pass


class DuplicateSupportPoint(ValidationError):
    pass


class DivisibilityViolation(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class BudgetExceeded(ValidationError):
    """Dense representation would exceed the configured entry budget."""


class ParseError(ValidationError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class SolverFailure(KmotError, RuntimeError):
    """The LP engine did not reach an optimal status."""

    def __init__(self, message, stats=None):
        self.stats = dict(stats or {})
        super().__init__(message)


class Stalled(SolverFailure):
    pass


class RowCapExceeded(SolverFailure):
    pass


class UnboundedEntry(SolverFailure):
    pass

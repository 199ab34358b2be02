"""Exception types shared across the package."""


class LatheError(Exception):
    """Base class for all package errors."""


class InvalidSizeError(LatheError, ValueError):
    pass


class InvalidArgumentError(LatheError, ValueError):
    pass


class NoDataError(LatheError, LookupError):
    """A node pair was never jointly observed."""


class DomainError(LatheError, ValueError):
    pass


class InfeasibleError(LatheError, ArithmeticError):
    """No tilt parameter satisfies the constraint."""


class TooLargeError(LatheError, ValueError):
    pass


class InsufficientDataError(LatheError, ValueError):
    pass


class LedgerViolation(LatheError, RuntimeError):
    """Spending exceeded the sample budget. Always a bug, never a data condition."""


class ConfigError(LatheError, ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))

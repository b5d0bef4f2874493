"""Exception hierarchy shared by all modules."""


class SnowflakeError(Exception):
    """Base class for every error raised by this package."""


class PoleError(SnowflakeError, ZeroDivisionError):
    """A Moebius map was evaluated at its pole."""


class SingularPointError(SnowflakeError, ArithmeticError):
    """The derivative of the slit map blows up at the requested point."""


class DegenerateBlockError(SnowflakeError, ValueError):
    """The building block is the identity (slit length zero)."""


class BranchError(SnowflakeError, ValueError):
    """A square-root branch is ambiguous (point on the slit)."""


class BracketError(SnowflakeError, RuntimeError):
    """No sign change was found for a root finder."""


class ConvergenceError(SnowflakeError, RuntimeError):
    """An iterative method stopped before reaching its tolerance."""

    def __init__(self, message, last_value=None, last_error=None):
        super().__init__(message)
        self.last_value = last_value
        self.last_error = last_error


class FitError(SnowflakeError, ValueError):
    """A fitted test function is not admissible."""

    def __init__(self, message, r=None):
        super().__init__(message)
        self.r = r


class NoCertifiedConstantsError(SnowflakeError, KeyError):
    """Certified constants are only available for the published parameters."""

    def __str__(self):
        return str(self.args[0]) if self.args else "no certified constants"

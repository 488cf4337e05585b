"""Exception hierarchy shared by all modules.

Every error carries the CLI exit code it maps to, so the command-line
front end never needs a lookup table.
"""


class BertrandError(Exception):
    exit_code = 1


class InvalidFamily(BertrandError, ValueError):
    """Parameters do not describe an admissible Bertrand family."""

    exit_code = 2


class DomainError(BertrandError, ValueError):
    """A radius or state lies outside the validity domain."""

    exit_code = 3


class QuadratureError(BertrandError, ArithmeticError):
    pass


class SingularityError(BertrandError, ArithmeticError):
    """The intrinsic oscillator potential is evaluated at its pole."""


class FitError(BertrandError, ArithmeticError):
    exit_code = 2


# dynamics

class StepFailure(BertrandError, RuntimeError):
    """The implicit stage equations did not converge."""


class DomainExit(DomainError):
    """A trajectory left the configuration domain.

    The partially integrated trajectory is kept on ``trajectory``.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class DriftExceeded(BertrandError):
    exit_code = 4


class DegenerateOrbit(BertrandError, ValueError):
    exit_code = 2


class DegeneratePoint(BertrandError, ValueError):
    exit_code = 2


class NoCircularOrbit(BertrandError, ValueError):
    exit_code = 5


class NoTurningPoints(BertrandError, ValueError):
    exit_code = 5


# quantum spectrum

class RegimeError(BertrandError, ValueError):
    exit_code = 2


class ConvergenceError(BertrandError, RuntimeError):
    exit_code = 6


class GridTooCoarse(BertrandError, RuntimeError):
    exit_code = 6


class SpectrumMismatch(BertrandError):
    exit_code = 6

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DegeneracyMismatch(SpectrumMismatch):
    pass


class LevelMismatch(SpectrumMismatch):
    pass

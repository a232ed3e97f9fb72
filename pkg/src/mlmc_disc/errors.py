"""Exception hierarchy shared by every module."""


class MlmcError(Exception):
    """Base class for library errors."""


class InvalidInputError(MlmcError, ValueError):
    pass


class InsufficientDataError(MlmcError, ValueError):
    pass


class UndefinedKurtosisError(MlmcError, ValueError):
    pass


class MaxLevelsExceeded(MlmcError):
    """Raised when the bias test still fails at ``l_max``; ``partial`` holds the last result."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class InvalidIntervalError(MlmcError, ValueError):
    pass


class InvalidRefinementError(MlmcError, ValueError):
    pass


class DegenerateDiffusionError(MlmcError, ZeroDivisionError):
    pass


class DivergentMomentError(MlmcError, ArithmeticError):
    pass


class NoSolutionError(MlmcError, ArithmeticError):
    pass


class AccuracyError(MlmcError, ArithmeticError):
    pass


class InsufficientPointsError(MlmcError, ValueError):
    pass


class InvalidGridError(MlmcError, ValueError):
    pass


class ConfigError(MlmcError, ValueError):
    """Config problem; ``lineno`` is the 1-based line in the source file when known."""

    def __init__(self, message, lineno=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)
        self.lineno = lineno
        self.path = path

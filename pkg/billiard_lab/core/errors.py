"""
Exception hierarchy
Every error carries the CLI exit status it maps to
"""


class BilliardLabError(Exception):
    """Base class for all billiard_lab failures"""
    exit_code = 3

    def __init__(self, message, **context):
        super().__init__(message)
        self.message = message
        self.context = context


# Input errors (exit status 2)
class GeometryError(BilliardLabError):
    exit_code = 2


class SceneFormatError(BilliardLabError):
    exit_code = 2

    def __init__(self, message, line=None, **context):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, line=line, **context)
        self.line = line


class WordError(BilliardLabError):
    exit_code = 2


class EnumerationBudgetError(BilliardLabError):
    exit_code = 2


class InsufficientDataError(BilliardLabError):
    exit_code = 2


class ConfigError(BilliardLabError):
    exit_code = 2


# Flow errors
class ReflectionError(BilliardLabError):
    pass


class TangencyError(BilliardLabError):
    def __init__(self, message, event=None, **context):
        super().__init__(message, event=event, **context)
        self.event = event


class PhaseNotDefinedError(BilliardLabError):
    pass


# Numeric failures (exit status 3)
class SolverStalledError(BilliardLabError):
    def __init__(self, message, residual=None, **context):
        super().__init__(message, residual=residual, **context)
        self.residual = residual


class ShadowedItineraryError(BilliardLabError):
    pass


class IllConditionedError(BilliardLabError):
    pass


class NonHyperbolicOrbitError(BilliardLabError):
    pass


class CausticError(BilliardLabError):
    pass


class ConvergenceViolationError(BilliardLabError):
    pass

"""Exception hierarchy. Each class maps to one CLI exit code."""


class BiphotonError(Exception):
    exit_code = 1


class ConfigurationError(BiphotonError, ValueError):
    """Bad or under-resolved input: grid, beam, mask, config file."""

    exit_code = 2


class ContractError(BiphotonError, RuntimeError):
    """An operation was called on a field in the wrong domain/state."""

    exit_code = 2


class ResourceError(BiphotonError, MemoryError):
    """Memory budget or cache capacity insufficient, or cache I/O failure."""

    exit_code = 3


class NumericalError(BiphotonError, ArithmeticError):
    exit_code = 4


class FitError(NumericalError):
    """Fringe fit did not converge. Carries the best attempt seen."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class ValidationFailure(BiphotonError):
    exit_code = 5

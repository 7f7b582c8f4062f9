"""Exception hierarchy shared across the package."""


class GeoCapsError(Exception):
    """Base class for all package errors."""


class ShapeError(GeoCapsError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(GeoCapsError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(GeoCapsError, ValueError):
    pass


class DataError(GeoCapsError):
    pass


class NumericalError(GeoCapsError, ArithmeticError):
    """Non-finite values appeared during optimization."""


class CheckpointError(GeoCapsError):
    pass

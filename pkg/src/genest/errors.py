"""Exception hierarchy shared by every genest module."""


class GenestError(Exception):
    """Base class for all errors raised by genest."""


class InvalidDimensionError(GenestError, ValueError):
    pass


class CapacityError(GenestError):
    """Result would be too large to materialize."""


class ShapeError(GenestError, ValueError):
    pass


class SingularMatrixError(GenestError, ArithmeticError):
    pass


class IllPosedError(SingularMatrixError):
    """Normal equations are rank deficient (typically too few pilots)."""


class FormatError(GenestError):
    """Malformed dataset or checkpoint file."""


class ConfigError(GenestError, ValueError):
    """Invalid configuration value."""


class UndefinedMetricError(GenestError, ValueError):
    pass

"""Exception hierarchy shared across the package."""


class ForensicsError(Exception):
    """Base class for all package errors."""


class DimensionError(ForensicsError, ValueError):
    pass


class ShapeError(ForensicsError, ValueError):
    pass


class ParameterError(ForensicsError, ValueError):
    pass


class UnsupportedFormatError(ForensicsError, ValueError):
    pass


class InvalidTransformError(ForensicsError, ValueError):
    pass


class CompressionError(ForensicsError, RuntimeError):
    pass


class DegenerateInputError(ForensicsError, ValueError):
    """Raised when an estimator cannot proceed on the given data (e.g. singular system)."""


class NumericError(ForensicsError, ArithmeticError):
    pass


class TrainingError(ForensicsError, ValueError):
    pass


class SeedingError(ForensicsError, ValueError):
    """Random walker could not place seeds for both labels."""


class DatasetError(ForensicsError, ValueError):
    pass


class EvaluationError(ForensicsError, ValueError):
    pass


class ConfigError(ForensicsError, ValueError):
    pass

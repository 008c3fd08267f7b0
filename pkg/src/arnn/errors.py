"""Exception types raised across the package."""


class ArnnError(Exception):
    """Base class for all package errors."""


class DimensionError(ArnnError, ValueError):
    """Operand shapes are not conformable."""


class ConfigError(ArnnError, ValueError):
    """A configuration is internally inconsistent (e.g. ``l`` does not divide ``n``)."""


class ParameterError(ArnnError, ValueError):
    """A scalar hyperparameter is outside its valid range."""


class DataError(ArnnError, ValueError):
    """Input data is missing, malformed or does not match the declared shape."""


class FormatError(ArnnError, ValueError):
    """A checkpoint file fails validation."""


class StateError(ArnnError, RuntimeError):
    """An operation was called out of order, e.g. backward before forward."""

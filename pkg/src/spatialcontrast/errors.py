"""Exception hierarchy. Each class maps onto one CLI exit category."""


class SCError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"


class DimensionError(SCError, ValueError):
    """Tensor shapes are incompatible with an operation."""

    category = "input"


class NumericError(SCError, ArithmeticError):
    """A forward or backward pass produced NaN or Inf."""

    category = "numeric"


class FormatError(SCError, ValueError):
    """A dataset or checkpoint file does not match its binary layout."""

    category = "data"


class ConfigError(SCError, ValueError):
    """A configuration file or flag value is invalid."""

    category = "config"


class StateError(SCError, RuntimeError):
    """An object was used before it was initialized (e.g. BN eval without stats)."""

    category = "input"


class DigestError(SCError):
    """A downloaded file failed checksum verification."""

    category = "data"

"""Exception types shared across the package."""


class WtaSoftmaxError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(WtaSoftmaxError, ValueError):
    """Invalid configuration or parameter combination."""


class DimensionError(WtaSoftmaxError, ValueError):
    """Array shape does not match the configured dimensionality."""


class InputError(WtaSoftmaxError, ValueError):
    """Input data is unusable, e.g. contains NaN."""


class NumericError(WtaSoftmaxError, ArithmeticError):
    """A computation produced non-finite values."""


class UsageError(WtaSoftmaxError, ValueError):
    """An operation was called in a way its contract forbids."""

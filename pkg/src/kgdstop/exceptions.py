class KgdError(Exception):
    """Base class for errors raised by kgdstop."""


class InputError(KgdError, ValueError):
    """Arguments with the wrong shape, dimension or range."""


class NumericError(KgdError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class ConfigError(KgdError, ValueError):
    """Invalid or unknown configuration keys/values."""

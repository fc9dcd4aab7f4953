"""Exception hierarchy shared by every reprlab module."""


class ReprLabError(Exception):
    """Base class for all errors raised by reprlab."""


class ConfigurationError(ReprLabError, ValueError):
    """Invalid configuration: bad shapes, unknown ids, out-of-range settings."""


class ContractError(ReprLabError, RuntimeError):
    """A precondition of an operation was violated by the caller."""


class NumericError(ReprLabError, FloatingPointError):
    """A non-finite value appeared where finite values are required."""


class ParseError(ConfigurationError):
    """An experiment config could not be parsed; ``key`` names the offender."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key

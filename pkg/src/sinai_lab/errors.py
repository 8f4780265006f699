"""Exception hierarchy shared by all modules."""


class SinaiLabError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigurationError(SinaiLabError, ValueError):
    """Invalid distribution, function or experiment configuration."""


class OutOfWindowError(SinaiLabError, IndexError):
    """A consumer read a site outside the materialized window."""

    def __init__(self, message, site=None):
        super().__init__(message)
        self.site = site


class DomainError(SinaiLabError, ValueError):
    """Arguments outside the mathematical domain of an operation."""


class TruncationError(SinaiLabError):
    """A truncated infinite object does not meet its tail tolerance."""


class OracleInfeasibleError(SinaiLabError):
    """The rejection oracle starved before collecting enough accepts."""


class UnsupportedSamplerError(SinaiLabError):
    """The requested sampler cannot handle this distribution."""

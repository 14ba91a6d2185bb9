"""Exception hierarchy shared by every module."""


class GmvpError(Exception):
    """Base class for all errors raised by gmvptest."""


class InputError(GmvpError, ValueError):
    """Malformed or out-of-domain input (non-finite data, bad dimensions, ...)."""


class DegenerateError(GmvpError, ArithmeticError):
    """A quantity required by the computation is (numerically) singular."""


class UnsupportedError(GmvpError, NotImplementedError):
    """The request is valid but outside what the routine is built to handle."""


class ConfigError(GmvpError, ValueError):
    """Inconsistent experiment or CLI configuration."""


class RankWarning(UserWarning):
    """Declared rank disagrees with the numerical rank of a covariance matrix."""

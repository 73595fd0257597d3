"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI lives in ``clae.cli``; library code only
raises these types.
"""


class ClaeError(Exception):
    """Base class for all package-specific errors."""


class ContractError(ClaeError):
    """A caller violated an operation precondition (shape, mode, range)."""


class NumericError(ClaeError):
    """Non-finite values or a numerically invalid state were encountered."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class ConfigError(ClaeError):
    """Invalid or inconsistent run configuration."""


class DataFormatError(ClaeError):
    """On-disk dataset or checkpoint bytes do not match the expected layout."""

"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: validation/configuration problems exit
with 1, file-format and I/O problems with 2.
"""


class CmfusionError(Exception):
    """Base class for all package errors."""


class ValidationError(CmfusionError, ValueError):
    """An input value violates an operation's precondition."""


class DimensionError(ValidationError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(CmfusionError, ValueError):
    """A configuration (variant, spec, run config) is inconsistent."""


class FormatError(CmfusionError, ValueError):
    """A binary or textual file does not match its expected format."""


class GradientError(CmfusionError, RuntimeError):
    """A gradient computation produced a non-finite or missing value."""

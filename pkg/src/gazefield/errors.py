"""Exception taxonomy shared across the package.

The CLI maps these to distinct exit codes, so keep the hierarchy flat and
stable: ConfigError (bad configuration), DataError (bad input data),
NumericError (non-finite values or numeric breakdown), ShapeError (tensor
shape mismatch), TapeError (autodiff tape misuse).
"""


class GazefieldError(Exception):
    """Base class for all package errors."""


class ConfigError(GazefieldError):
    """Invalid or inconsistent configuration."""


class DataError(GazefieldError):
    """Malformed annotation files, images, or out-of-range coordinates."""


class NumericError(GazefieldError):
    """NaN/Inf encountered, or a numeric operation broke down."""


class ShapeError(GazefieldError):
    """Tensor shapes incompatible with the requested operation."""


class TapeError(GazefieldError):
    """Computation tape misuse (backward without a tape, double consume)."""

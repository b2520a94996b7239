"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: NumericError (training divergence,
non-finite values) exits 1, everything else exits 2.
"""


class StkdError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(StkdError):
    """Operand shapes are incompatible with the requested operation."""


class ParameterError(StkdError):
    """An argument is outside its documented range."""


class DataError(StkdError):
    """Input data violates a documented invariant (not a parse problem)."""


class FormatError(StkdError):
    """A file or config document cannot be parsed as specified."""


class NumericError(StkdError):
    """A computation produced or encountered non-finite values."""


class ContractError(StkdError):
    """An API was called in a way that violates its usage contract."""

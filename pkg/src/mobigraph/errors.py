"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps these onto exit codes, so library code should raise the most
specific class that applies.
"""


class MobigraphError(Exception):
    """Base class for all package errors."""


class DataError(MobigraphError, ValueError):
    """Malformed, inconsistent or insufficient input data."""


class DimensionError(DataError):
    """Two objects that must agree in size do not."""


class NumericalError(MobigraphError, ArithmeticError):
    """A computation produced non-finite values or could not proceed."""

"""Exception types shared across oclkit.

Each class maps to one failure category; the CLI turns ``ConfigError`` into
exit status 2 and everything else into exit status 1.
"""


class OclError(Exception):
    """Base class for all oclkit errors."""

    category = "error"


class ConfigError(OclError, ValueError):
    category = "config"


class ShapeError(OclError, ValueError):
    category = "shape"


class NumericalError(OclError, ArithmeticError):
    category = "numerical"


class OutOfRegionError(OclError, ValueError):
    category = "region"


class ScheduleRangeError(OclError, ValueError):
    category = "range"


class IntegrityError(OclError):
    category = "integrity"


class ComparisonError(OclError):
    category = "comparison"

"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map it without a lookup
table: 2 for configuration problems, 3 for violated preconditions and 4 for
numerical failures.
"""


class CarmaError(Exception):
    exit_code = 4


class ConfigError(CarmaError, ValueError):
    exit_code = 2


class PreconditionError(CarmaError, ValueError):
    exit_code = 3


class NumericalError(CarmaError, ArithmeticError):
    exit_code = 4


class GridMismatchError(PreconditionError):
    pass


class PaddingError(PreconditionError):
    """Support of a gridded function touches the periodic boundary."""


class SingularSymbolError(PreconditionError):
    """A denominator symbol vanishes on the sampled frequency grid."""


class NotAFunctionError(PreconditionError):
    """The inverse Fourier transform of the symbol is not a square-integrable function."""


class StationarityError(PreconditionError):
    pass


class WrapAroundError(PreconditionError):
    pass


class ResourceError(CarmaError):
    exit_code = 4

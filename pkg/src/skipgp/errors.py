"""Exception hierarchy shared by all modules."""


class SkipGPError(Exception):
    """Base class for every error raised by the library."""


class DimensionError(SkipGPError, ValueError):
    pass


class NumericalBreakdownError(SkipGPError, ArithmeticError):
    """Non-finite values appeared inside an iterative solver."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class NonConvergenceError(SkipGPError, ArithmeticError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class OutOfRangeError(SkipGPError, ValueError):
    """A point falls outside the interpolable interior of a grid."""

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class UnsupportedDecompositionError(SkipGPError, ValueError):
    pass


class InitializationError(SkipGPError, ValueError):
    pass


class SchemaError(SkipGPError, ValueError):
    pass


class ParseError(SkipGPError, ValueError):
    def __init__(self, message, row, column):
        super().__init__(f"{message} at row {row}, column {column!r}")
        self.row = row
        self.column = column


class ValidationError(SkipGPError, ValueError):
    pass


class MissingModelError(SkipGPError, FileNotFoundError):
    pass


class ConfigError(SkipGPError, ValueError):
    pass

"""Exception hierarchy shared by every pipeline stage.

The CLI maps ``ConfigError`` to exit code 1, ``DataError`` to 2 and
``InvariantError`` to 3.
"""


class PipelineError(Exception):
    """Base class for all errors raised by pmfuse."""


class ConfigError(PipelineError):
    """Invalid manifest, configuration value, or layer name."""

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)


class DataError(PipelineError):
    """The data cannot support the requested computation."""


class CoordinateError(DataError):
    pass


class IngestError(DataError):
    pass


class UndefinedStatisticError(DataError):
    pass


class EmptyDataError(DataError):
    pass


class SingularFitError(DataError):
    pass


class ConvergenceError(DataError):
    def __init__(self, message, iterations):
        super().__init__(message)
        self.iterations = iterations


class SelectionError(DataError):
    pass


class UnsupportedOperationError(PipelineError, TypeError):
    pass


class InvariantError(PipelineError, AssertionError):
    """An internal consistency check failed."""

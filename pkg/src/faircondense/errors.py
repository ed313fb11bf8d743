"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps the three top-level families onto distinct exit codes.
"""


class FairCondenseError(Exception):
    exit_code = 1


class ConfigError(FairCondenseError, ValueError):
    exit_code = 2


class DataError(FairCondenseError):
    exit_code = 3


class SchemaError(DataError):
    pass


class ParseError(DataError):
    pass


class IntegrityError(DataError):
    pass


class StaleArtifactError(IntegrityError):
    pass


class NumericError(FairCondenseError, ArithmeticError):
    exit_code = 4


class ConvergenceError(NumericError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DimensionError(FairCondenseError, ValueError):
    exit_code = 4


class UndefinedMetricError(FairCondenseError, ValueError):
    exit_code = 3

"""Exception hierarchy.

``DataError`` subclasses map to CLI exit code 3 and ``ConfigError`` to 2.
"""


class RasoptError(Exception):
    pass


class ShapeMismatch(RasoptError, ValueError):
    pass


class RankDeficient(RasoptError, ArithmeticError):
    pass


class ConfigError(RasoptError, ValueError):
    pass


class AuditError(RasoptError, AssertionError):
    """An invariant monitored during a run was violated."""


class ZeroOptimal(RasoptError, ZeroDivisionError):
    pass


class MissingMetric(RasoptError, KeyError):
    pass


class DataError(RasoptError):
    pass


class ParseError(DataError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class EmptyFile(DataError, ValueError):
    pass


class TooFewRatings(DataError, ValueError):
    pass


class DensityTooLow(DataError, ValueError):
    pass


class EmptyColumn(DataError, ValueError):
    pass


class SingularSystem(DataError, ArithmeticError):
    pass


class ColdColumn(DataError, ValueError):
    pass


class BadBatchSize(ConfigError):
    pass

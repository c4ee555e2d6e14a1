"""Exception hierarchy.

``DataError`` subclasses map to CLI exit code 2, ``ProviderError`` to 3.
"""


class TabgraphError(Exception):
    pass


class DataError(TabgraphError):
    pass


class MalformedTable(DataError):
    pass


class EmptyTable(DataError):
    pass


class MultipleTables(DataError):
    pass


class NoHeaderRows(DataError):
    pass


class RowOutOfRange(DataError, IndexError):
    pass


class InconsistentReport(DataError):
    pass


class MissingAnnotation(DataError):
    pass


class CountMismatch(DataError):
    pass


class AlignmentError(DataError):
    pass


class CheckFailed(DataError):
    """A numerical self-check did not meet its tolerance."""


class ShapeMismatch(DataError, ValueError):
    pass


class UnknownEdgeType(DataError, KeyError):
    pass


class EmptyMask(DataError, ValueError):
    pass


class Divergence(DataError, FloatingPointError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class ProviderError(TabgraphError):
    pass


class ProviderUnavailable(ProviderError):
    pass


class DimensionMismatch(ProviderError):
    pass

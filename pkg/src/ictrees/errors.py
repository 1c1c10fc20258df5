"""Exception hierarchy shared by all ictrees modules."""


class IcTreeError(Exception):
    """Base class for every error raised by this package."""


class ParseError(IcTreeError):
    """A cell could not be read as its declared column kind."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyData(IcTreeError):
    """The input contains no data rows."""


class UnknownCategory(ParseError):
    """A symbolic value that is not among the frozen categories of its column."""


class SingularCovariance(IcTreeError):
    """The empirical covariance of a block is (numerically) rank deficient."""


class DegenerateSupport(IcTreeError):
    """All samples are equal, so no continuous distribution can be fitted."""


class InconsistentEvidence(IcTreeError):
    """Evidence assigns zero probability to every leaf."""


class InsufficientAcceptance(IcTreeError):
    """Too few samples survived rejection to estimate a statistic."""

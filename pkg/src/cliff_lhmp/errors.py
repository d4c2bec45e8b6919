"""Exception hierarchy shared by all modules."""


class CliffError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(CliffError, ValueError):
    pass


class NumericalDegenerateError(CliffError, ArithmeticError):
    pass


class InsufficientDataError(CliffError):
    pass


class EmptyMapError(CliffError):
    pass


class MalformedTrajectoryError(CliffError, ValueError):
    pass


class ParseError(CliffError, ValueError):
    pass


class FormatVersionError(ParseError):
    pass


class EmptyReportError(CliffError):
    pass

"""Exception hierarchy.

Three families map onto the CLI exit codes: ``UsageError`` (1),
``DataError`` (2) and ``NumericalError`` (3).
"""


class SqfcError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class UsageError(SqfcError, ValueError):
    exit_code = 1


class DataError(SqfcError, ValueError):
    exit_code = 2


class NumericalError(SqfcError, ArithmeticError):
    exit_code = 3


# data problems
class MissingColumn(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DuplicateSite(DataError):
    pass


class EmptyDataset(DataError):
    pass


class NotPlanar(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class TooFewResiduals(DataError):
    pass


# bad arguments
class DimensionMismatch(UsageError):
    pass


class UnsupportedOrder(UsageError):
    pass


class InvalidConfig(UsageError):
    pass


class OutOfHull(UsageError):
    pass


# numerical failures
class InsufficientSupport(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class SingularDelta(NumericalError):
    pass


class SingularPhi(NumericalError):
    pass


class EmptyWindow(NumericalError):
    pass


class AllPointsFailed(NumericalError):
    pass


class NoEvaluableSites(NumericalError):
    pass


class AllCandidatesFailed(NumericalError):
    pass

"""Exception hierarchy shared across the package."""


class GSFError(Exception):
    """Base class for all package errors."""


class MeasureError(GSFError, ValueError):
    pass


class WeightSumError(MeasureError):
    pass


class NegativeWeight(MeasureError):
    pass


class DimensionMismatch(MeasureError):
    pass


class InvalidAtom(GSFError, ValueError):
    pass


class InvalidObservation(GSFError, ValueError):
    pass


class DegenerateCovariance(GSFError, ArithmeticError):
    pass


class NonPositiveWeight(GSFError, ValueError):
    pass


class ZeroTildeNorm(GSFError, ValueError):
    pass


class InvalidPartition(GSFError, ValueError):
    pass


class LineSearchDiverged(GSFError, ArithmeticError):
    pass


class AllZeroLikelihood(GSFError, ArithmeticError):
    pass


class InvalidGrid(GSFError, ValueError):
    pass


class EmptyPath(GSFError, ValueError):
    pass


class UnsupportedOrder(GSFError, ValueError):
    pass


class UnknownModel(GSFError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DataError(GSFError, ValueError):
    """Malformed input data (CSV ingestion)."""


class ParseError(DataError):
    pass


class RaggedRows(DataError):
    pass


class TrialSumMismatch(DataError):
    pass

"""Exception hierarchy shared by every module."""


class GaslError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(GaslError, ValueError):
    """A hyperparameter or argument is outside its admissible range."""


class InsufficientDataError(GaslError, ValueError):
    """Too few samples for the requested statistic."""


class ShapeError(GaslError, ValueError):
    """Operand shapes do not conform."""


class DataError(GaslError, ValueError):
    """Input data is malformed (bad labels, mismatched lengths, ...)."""


class QueryError(GaslError, LookupError):
    """A query was made against a layer that cannot answer it."""


class FormatError(GaslError, ValueError):
    """A binary or text container has an unexpected layout."""


class LengthError(FormatError):
    """A binary payload is shorter than its header promises."""


class NumericalError(GaslError, FloatingPointError):
    """A non-finite value appeared during optimisation."""

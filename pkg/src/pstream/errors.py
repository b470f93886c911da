"""Exception hierarchy shared by all modules."""


class PStreamError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(PStreamError, ValueError):
    """A univariate operation received a multivariate distribution (or vice versa)."""


class ParameterError(PStreamError, ValueError):
    pass


class InputError(PStreamError, ValueError):
    pass


class ZeroMassError(PStreamError):
    """A truncation predicate carries (numerically) no probability mass."""


class CoverageError(PStreamError):
    """An evaluation grid is too narrow for the distribution it must hold."""


class DegenerateSeriesError(PStreamError):
    pass


class MAAssumptionError(PStreamError):
    pass


class MethodError(PStreamError):
    pass


class CorrelationError(PStreamError):
    """Inputs share lineage, so independent-input algorithms do not apply."""


class ArchiveMissError(PStreamError, KeyError):
    pass


class UnsupportedLineageError(PStreamError):
    pass


class ValidationError(PStreamError):
    """A dataflow graph or pipeline file is malformed."""


class ConvergenceWarning(UserWarning):
    pass


class NumericWarning(UserWarning):
    pass

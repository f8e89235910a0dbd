"""Exception hierarchy shared by every stage of the analysis."""


class OptImpactError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(OptImpactError, ValueError):
    """An input lies outside the domain of the operation."""


class ArbitrageError(DomainError):
    """An observed option price violates static no-arbitrage bounds."""


class ConvergenceError(OptImpactError, RuntimeError):
    """A numerical solver hit its iteration cap without converging."""


class CalibrationError(OptImpactError):
    """A smile could not be calibrated from a quote snapshot."""


class EmptySeriesError(OptImpactError):
    """No snapshot could be calibrated, so no parameter series exists."""


class SeriesLookupError(OptImpactError, LookupError):
    """A parameter value was requested before the first calibrated point."""


class UndefinedError(OptImpactError, ZeroDivisionError):
    """A ratio is undefined because its denominator vanishes."""


class FitError(OptImpactError):
    """Too few usable points for a regression."""


class ReconciliationError(OptImpactError):
    """Estimates and ground truth refer to different metaorders."""


class SchemaError(OptImpactError):
    """An input file does not follow the expected column layout."""


class ConfigError(OptImpactError):
    """Invalid pipeline or simulator configuration."""


class SynthError(OptImpactError):
    """The simulator cannot generate a market from the given configuration."""

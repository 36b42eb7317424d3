"""Exception hierarchy shared across the package."""


class EpiglabError(Exception):
    """Base class for all package errors."""


class FormatError(EpiglabError):
    """A file does not conform to its declared binary or CSV layout."""


class DataError(EpiglabError):
    """Well-formed input carries values that violate a data contract."""


class ConfigError(EpiglabError):
    """Invalid configuration or argument combination."""


class ShapeError(EpiglabError):
    """Array dimensions do not line up."""


class StateError(EpiglabError):
    """Operation invoked in a state that cannot support it."""


class TrainingError(EpiglabError):
    """Optimization produced a non-finite loss or otherwise failed."""


class ScoringError(EpiglabError):
    """An acquisition scorer produced an unusable value."""


class TuningError(EpiglabError):
    """Hyperparameter search found no admissible value."""


class AggregationError(EpiglabError):
    """Run records cannot be combined (mismatched grids or counts)."""


class TimingError(EpiglabError):
    """No timed steps to summarize."""

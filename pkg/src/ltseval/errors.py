"""Exception types and non-failure status markers shared across ltseval."""

from enum import Enum


class LtsEvalError(Exception):
    """Base class for all errors raised by ltseval."""


class ParameterError(LtsEvalError, ValueError):
    pass


class ExtrapolationError(LtsEvalError, ValueError):
    """Requested time lies outside the trajectory's sample range."""


class BoundaryError(LtsEvalError, ValueError):
    """Velocity requested at (or beyond) the first/last sample."""


class DegenerateGeometryError(LtsEvalError, ValueError):
    pass


class DegeneratePathError(LtsEvalError, ValueError):
    pass


class UnobservableOffsetError(LtsEvalError):
    """Time-offset objective is flat, e.g. the ELT never moved."""


class NoEmittableSamplesError(LtsEvalError):
    pass


class InsufficientDataError(LtsEvalError):
    pass


class EmptyResultsError(LtsEvalError):
    pass


class SchemaError(LtsEvalError):
    """A document does not match its expected structure."""


class Unavailable(str, Enum):
    """Markers reported in place of a metric value.

    These are results, not failures: a report carries them through to the
    requirement matching, where they never count as a pass.
    """

    INSUFFICIENT_SAMPLES = "insufficient_samples"
    INSUFFICIENT_DYNAMIC_SAMPLES = "insufficient_dynamic_samples"
    INSUFFICIENT_DATA = "insufficient_data"
    NOT_PROVIDED = "not_provided"
    NOT_COMPUTABLE = "not_computable"
    UNOBSERVABLE = "unobservable"
    NOT_APPLICABLE = "not_applicable"

    def __str__(self) -> str:
        return self.value


InsufficientSamples = Unavailable.INSUFFICIENT_SAMPLES
InsufficientDynamicSamples = Unavailable.INSUFFICIENT_DYNAMIC_SAMPLES
NotProvided = Unavailable.NOT_PROVIDED

"""Shared exception types raised across the pipeline."""

from __future__ import annotations


class StagevalError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(StagevalError):
    """A provider or CLI configuration is unusable (missing key, bad value)."""


class TransportError(StagevalError):
    """All retries against a model provider were exhausted.

    Carries the per-attempt log so callers can see what happened on the wire.
    """

    def __init__(self, message: str, attempts: list[str] | None = None):
        super().__init__(message)
        self.attempts = attempts or []


class JsonExtractionError(StagevalError):
    """No parseable JSON object could be recovered from model output."""

    def __init__(self, message: str, text: str = ""):
        super().__init__(message)
        self.text = text


class LoadError(StagevalError):
    """A dataset, manifest, or score file failed to load or validate."""


class CrossReferenceError(StagevalError):
    """Two records that must refer to the same entity do not."""


class GenerationError(StagevalError):
    """Decomposition or rubric generation failed after the repair limit.

    ``attempts`` holds the recorded repair attempts, newest last.
    """

    def __init__(self, message: str, attempts: list | None = None):
        super().__init__(message)
        self.attempts = attempts or []


class JudgingError(StagevalError):
    """Judge output stayed unusable after the repair round."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class ConsistencyError(JudgingError):
    """A judge verdict level contradicts its awarded score after repair."""


class ClassificationError(StagevalError):
    """Failure-cause classification could not produce valid taxonomy labels."""


class StateError(StagevalError):
    """An illegal status or run-state transition was requested."""


class CompletenessError(StagevalError):
    """A score set or rater grid is missing or duplicating required cells."""


class DegenerateDesignError(StagevalError):
    """The rater design cannot support the requested statistic (n < 2 or k < 2)."""


class UndefinedAgreementError(StagevalError):
    """ICC is undefined for the given matrix (zero denominator)."""


class DegenerateInputError(StagevalError):
    """An aggregate was requested over an empty collection."""

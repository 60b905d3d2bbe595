"""Exception and warning types shared across the package."""

from __future__ import annotations


class HedonixError(Exception):
    """Base class for every error raised by this package."""


class ParseError(HedonixError):
    """A malformed input row or stream; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(HedonixError):
    """Input violates a domain invariant (negative quantity, bad shape, ...)."""


class DimensionError(ValidationError):
    """Array shapes do not compose."""


class EmptyVocabularyError(HedonixError):
    """All tokens were filtered out while building a vocabulary."""


class NoTrainingExamplesError(HedonixError):
    """Corpus too short to produce a single training window."""


class UndefinedSimilarityError(HedonixError):
    """Cosine similarity requested for a zero-norm vector."""


class UndefinedRateError(HedonixError):
    """Turnover or growth rate with an empty reference set."""


class DegenerateBatchError(HedonixError):
    """A training batch with no observed price cells."""


class TrainingDivergedError(HedonixError):
    """Non-finite loss or gradient during training."""

    def __init__(self, message: str, epoch: int | None = None):
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
        self.epoch = epoch


class SingularDesignError(HedonixError):
    """Rank-deficient regression design with no ridge fallback requested."""


class InsufficientDataError(HedonixError):
    """Fewer observations than coefficients in a regression."""


class NoOverlapError(HedonixError):
    """Empty match set between two compared periods."""


class DegenerateBasketError(HedonixError):
    """An index denominator sums to zero."""


class CoverageError(HedonixError):
    """Hedonic prices missing for basket members; lists the offenders."""

    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = missing or []


class AlignmentError(HedonixError):
    """Series or grids that should align do not."""


class ChainError(HedonixError):
    """A bilateral computation failed while chaining; carries the step."""

    def __init__(self, message: str, step: int):
        super().__init__(f"chain step {step}: {message}")
        self.step = step


class ProductLookupError(HedonixError, KeyError):
    """Unknown product id."""


class ConfigError(HedonixError):
    """Bad or inconsistent pipeline configuration."""


class ReportError(HedonixError):
    """Report rendering is missing required artifacts."""


class StageLockError(HedonixError):
    """Another stage currently holds the output-directory lock."""


class FeasibilityWarning(UserWarning):
    """A synthetic market spec that cannot honor all requested rates."""


class SplitDegradedWarning(UserWarning):
    """Stratified splitting fell back to global assignment."""

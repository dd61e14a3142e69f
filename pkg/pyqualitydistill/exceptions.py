"""Error hierarchy shared by every module of the package."""

from typing import Any, Optional


class QualityDistillError(Exception):
    """Base class for all package errors."""


class ConfigurationError(QualityDistillError):
    """Invalid configuration value, key, or model shape."""


class InvalidSignalError(QualityDistillError):
    """Teacher signal that cannot be turned into a probability."""

    def __init__(self, message: str, image_id: Optional[Any] = None):
        self.image_id = image_id
        if image_id is not None:
            message = f"{message} (image id: {image_id})"
        super().__init__(message)


class ShapeError(QualityDistillError):
    """Array dimensions do not match the model."""


class TrainingDivergenceError(QualityDistillError):
    """Non-finite gradient or loss during optimization."""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(message)


class EmptyBatchError(QualityDistillError):
    """A loss or statistic received no samples."""


class DegenerateBatchError(QualityDistillError):
    """A batch cannot support the requested statistic (too small or constant labels)."""


class DegenerateMetricError(QualityDistillError):
    """A correlation is undefined because one input is constant."""


class DegenerateFitError(QualityDistillError):
    """A least-squares fit is undefined because the regressor is constant."""


class InsufficientDataError(QualityDistillError):
    """Not enough items to perform the requested sampling."""


class BudgetTooSmallError(QualityDistillError):
    """The MOS budget yields too few labeled items."""


class MissingLabelsError(QualityDistillError):
    """Labels were required but none are available."""


class MissingSignalError(QualityDistillError):
    """A training image has no teacher point signal."""


class DanglingPairError(QualityDistillError):
    """A supervision pair references an image outside the usable set."""

    def __init__(self, image_id: Any, context: str = "pair set"):
        self.image_id = image_id
        super().__init__(f"Pair references unknown image id {image_id!r} ({context})")


class FormatError(QualityDistillError):
    """A data file failed to parse."""

    def __init__(self, path: Any, line: int, column: Any, message: str):
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(f"{self.path}:{line}:{column}: {message}")


class DanglingReferenceError(QualityDistillError):
    """An id in one data file has no counterpart in another."""

    def __init__(self, image_id: Any, source: Any, target: Any):
        self.image_id = image_id
        self.source = str(source)
        self.target = str(target)
        super().__init__(
            f"Id {image_id!r} referenced in {self.source} is not present in {self.target}"
        )


class MissingArtifactError(QualityDistillError):
    """A run artifact needed by a command does not exist."""

    def __init__(self, path: Any, hint: str = ""):
        self.path = str(path)
        message = f"Missing artifact: {self.path}"
        if hint:
            message = f"{message} ({hint})"
        super().__init__(message)


class TemplateError(QualityDistillError):
    """A prompt template lacks a required placeholder."""


class UnparseableResponseError(QualityDistillError):
    """An endpoint response carries no usable log-probabilities."""

    def __init__(self, message: str, raw: Any = None):
        self.raw = raw
        super().__init__(message)


class HarvestError(QualityDistillError):
    """Every request of a harvest failed."""


class SeedRunError(QualityDistillError):
    """A seeded repeat failed; the original error is chained."""

    def __init__(self, seed: int, cause: BaseException):
        self.seed = seed
        self.cause = cause
        super().__init__(f"Run with seed {seed} failed: {cause}")

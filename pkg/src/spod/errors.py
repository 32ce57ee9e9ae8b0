"""Error taxonomy.

Two families matter to callers: ValidationError for bad inputs or
configuration (CLI exit code 1) and NumericalError for runtime math
failures on well-formed inputs (CLI exit code 2).
"""

from __future__ import annotations


class SpodError(Exception):
    """Base class for all package errors."""


class ValidationError(SpodError):
    """Invalid argument, configuration, or file content."""


class DimensionError(ValidationError):
    """Shape or dtype mismatch between arrays and the declared model."""


class EmptyClassError(ValidationError):
    """A requested class has no samples."""


class CapacityError(ValidationError):
    """An input exceeds a configured resource cap."""


class BlockStructureUndefinedError(ValidationError):
    """Block decomposition is only defined for class-balanced batches."""


class FormatError(ValidationError):
    """A binary file does not match its declared format."""


class NumericalError(SpodError):
    """A computation failed numerically on otherwise valid input."""


class TrainingDivergedError(NumericalError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")


class DegenerateFitError(NumericalError):
    """All spectral mass vanished; no principal subspace exists."""


class ZeroGradientError(NumericalError):
    """A centered gradient has numerically zero norm; the score is undefined."""


class GapCollapsedError(NumericalError):
    """A required spectral gap is non-positive; the bound is undefined."""


class UndefinedCertificateError(NumericalError):
    """Certificate preconditions fail (e.g. zero feature vector)."""

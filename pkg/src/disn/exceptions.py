"""Custom exceptions for disn."""

from __future__ import annotations


class DisnError(Exception):
    """Base exception for all disn errors."""

    exit_code: int = 1


class ConfigError(DisnError):
    """Configuration file or parameter errors."""


class ShapeError(DisnError):
    """Tensor dimension mismatches."""


class BatchStructureError(DisnError):
    """Batch rows are not organized as contiguous triplets."""


class DegenerateBatchError(DisnError):
    """Batch too small for the requested statistic."""


class EmptyDatasetError(DisnError):
    """No usable data after filtering."""


class EmbeddingFileError(DisnError):
    """Embedding file read/write errors."""


class MalformedHeaderError(EmbeddingFileError):
    """Embedding file header is not a valid EMB1 header."""


class DimensionMismatchError(EmbeddingFileError):
    """Embedding dimension differs from the configured one."""


class TruncatedFileError(EmbeddingFileError):
    """Embedding file ends in the middle of a record."""


class CheckpointError(DisnError):
    """Checkpoint read/write errors."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class CorruptTensorError(CheckpointError):
    """A tensor block does not match its manifest entry."""


class MissingTensorError(CheckpointError):
    """A tensor required by the model is absent from the checkpoint."""


class ConfigMismatchError(CheckpointError):
    """Checkpoint model configuration differs from the requested one."""


class ScoringError(DisnError):
    """Trial scoring errors."""


class ProtocolError(DisnError):
    """Evaluation protocol cannot be satisfied by the data."""


class ProbeError(DisnError):
    """Linear probe errors."""


class NumericError(DisnError):
    """Non-finite values in a computation."""

    exit_code: int = 2


class GradientCheckError(NumericError):
    """Analytic gradients disagree with finite differences."""


class ArtifactError(DisnError):
    """Output artifacts could not be written."""

    exit_code: int = 2


class ValidationError(DisnError):
    """Input validation errors."""

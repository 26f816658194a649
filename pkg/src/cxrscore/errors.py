"""Typed error hierarchy.

Every failure the library raises on purpose derives from CxrScoreError and
carries a short machine-readable ``kind`` so the CLI can print one diagnostic
line and map the failure to an exit code.
"""


class CxrScoreError(Exception):
    """Base class for all library errors."""

    kind = "core"
    exit_code = 1


class ArgumentError(CxrScoreError):
    """A caller passed an out-of-contract argument (bad range, length mismatch)."""

    kind = "argument"


class ConfigurationError(CxrScoreError):
    """A configuration object is internally inconsistent or has unknown keys."""

    kind = "config"


class ShapeError(CxrScoreError):
    """A tensor does not have the shape the model was configured for."""

    kind = "model.shape"


class CheckpointError(CxrScoreError):
    """A weight file is malformed, truncated, or belongs to another config."""

    kind = "model.checkpoint"


class IngestError(CxrScoreError):
    """A manifest or image failed validation on load."""

    kind = "data.ingest"


class AugmentationError(CxrScoreError):
    """An augmentation precondition does not hold for the given samples."""

    kind = "augment"


class UndefinedCorrelationError(CxrScoreError):
    """Pearson correlation is undefined because one input has zero variance."""

    kind = "evaluation.correlation"


class TrainingError(CxrScoreError):
    """Training aborted, e.g. the loss became non-finite."""

    kind = "training"
    exit_code = 2


class CliUsageError(CxrScoreError):
    """Command line arguments could not be parsed."""

    kind = "cli.usage"

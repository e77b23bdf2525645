"""Exception types shared across the package."""


class LangfieldError(Exception):
    """Base class for all errors raised by this package."""


class ManifestError(LangfieldError):
    """Dataset manifest is missing, malformed, or references bad data."""


class PyramidFormatError(LangfieldError):
    """Embedding container failed validation (header, dims, or norms)."""


class CheckpointFormatError(LangfieldError):
    """Checkpoint file failed validation."""


class TrainDiverged(LangfieldError):
    """Training hit a non-finite loss; carries the diagnostic dump."""

    def __init__(self, step, losses, detail=""):
        self.step = step
        self.losses = losses
        super().__init__(
            f"non-finite loss at step {step}: {losses}" + (f" ({detail})" if detail else "")
        )

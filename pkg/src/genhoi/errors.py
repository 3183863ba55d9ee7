"""Exception hierarchy for genhoi.

Every error raised on purpose by the package derives from ``GenHOIError`` so the
CLI can turn it into a one-line diagnostic and a non-zero exit code.
"""

from __future__ import annotations


class GenHOIError(Exception):
    def __init__(self, message: str):
        self.message = message
        super().__init__(message)


class ConfigError(GenHOIError):
    pass


class LabelSpaceError(GenHOIError):
    def __init__(self, message: str, offender: object = None):
        self.offender = offender
        super().__init__(message)


class SplitError(GenHOIError, ValueError):
    pass


class PromptError(GenHOIError):
    pass


class EmbeddingError(GenHOIError):
    def __init__(self, message: str, prompt: str | None = None):
        self.prompt = prompt
        super().__init__(message)


class EmbeddingFileError(GenHOIError):
    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(message)


class ShapeError(GenHOIError, ValueError):
    pass


class CheckpointError(GenHOIError):
    pass


class MatchingError(GenHOIError, ValueError):
    pass


class TrainingDivergedError(GenHOIError):
    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"Training diverged at step {step}: loss={loss}")


class ManifestError(GenHOIError):
    pass


class GenerationError(GenHOIError):
    def __init__(self, message: str, sample_index: int, attempts: int):
        self.sample_index = sample_index
        self.attempts = attempts
        super().__init__(message)


class EvaluationError(GenHOIError):
    pass

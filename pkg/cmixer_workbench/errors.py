"""
Exception hierarchy for the CMixer workbench.

Validation failures subclass ValueError so callers can keep catching bad
input the built-in way.
"""


class CMixerError(Exception):
    """Root of every error raised by this package."""


class ValidationError(CMixerError, ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    """Tensor or matrix shapes are inconsistent."""


class ConfigurationError(ValidationError):
    """A model or experiment configuration is invalid."""


class TrainingDivergedError(CMixerError, RuntimeError):
    """
    Raised when the training loss stops being finite.

    Attributes:
        epoch: 1-based epoch of the failing step
        batch: 0-based batch index inside that epoch
        lr: learning rate in effect
    """

    def __init__(self, epoch: int, batch: int, lr: float, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.lr = lr
        self.loss = loss
        super().__init__(
            f"Non-finite loss {loss} at epoch {epoch}, batch {batch} (lr={lr:g})"
        )

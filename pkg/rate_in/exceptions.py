"""Exception types raised by the rate_in package."""

from __future__ import annotations


class RateInError(Exception):
    """Base class for every error raised on purpose by rate_in."""


class ConfigError(RateInError, ValueError):
    """Invalid option, argument combination or run configuration."""


class ShapeError(RateInError, ValueError):
    """Array shapes do not line up (input width, map shapes, lengths)."""


class RateDomainError(RateInError, ValueError):
    """A dropout rate or MC iteration index is outside its domain."""


class InsufficientSamplesError(RateInError, ValueError):
    """Too few samples for a histogram estimate."""


class UndefinedReferenceError(RateInError):
    """Reference information I_full is zero, so a relative loss is undefined."""


class UndefinedMetricError(RateInError, ValueError):
    """A metric has no defined value for the given input (e.g. empty region)."""


class PersistenceError(RateInError):
    """A saved file is malformed or has an unsupported format version."""


class TrainingDivergenceError(RateInError):
    """Training loss became NaN or infinite."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")

"""Exception types shared across the package."""


class GKCMNError(Exception):
    """Base class for all package errors."""


class ShapeError(GKCMNError, ValueError):
    """An array has the wrong rank, extent, or channel count."""


class DomainError(GKCMNError, ValueError):
    """A value lies outside the domain an operation is defined on."""


class DivergenceError(GKCMNError, RuntimeError):
    """An optimisation run produced a non-finite or exploding loss."""

    def __init__(self, step: int, loss: float, reason: str = "non-finite loss"):
        self.step = step
        self.loss = loss
        self.reason = reason
        super().__init__(f"diverged at step {step}: {reason} (loss={loss!r})")

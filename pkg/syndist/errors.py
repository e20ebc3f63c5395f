"""Exception hierarchy shared by the numerical core, the runner and the API.

Geometry failures inside warping are never raised; they travel as validity
masks. Everything else that can go wrong surfaces as one of these.
"""

from typing import Optional


class SyndistError(Exception):
    """Base class for all syndist errors."""


class InvalidArgumentError(SyndistError, ValueError):
    """Malformed input: shape mismatch, non-finite values, bad parameters."""


class OutOfRangeError(InvalidArgumentError):
    """A value lies outside the domain where an operation is defined."""


class ConfigError(InvalidArgumentError):
    """An experiment, scene or camera configuration failed validation."""


class DegenerateInputError(SyndistError, ValueError):
    """A reduction would average over an empty support."""


class DegenerateScaleError(DegenerateInputError):
    """Scale recovery against a (near) zero estimated translation."""


class UnsupportedGradientError(SyndistError, RuntimeError):
    """A gradient was requested through a non-differentiable path."""


class DivergenceError(SyndistError, RuntimeError):
    """The refinement objective became NaN or infinite."""

    def __init__(self, message: str, iteration: int, last_loss: Optional[float] = None):
        super().__init__(message)
        self.iteration = iteration
        self.last_loss = last_loss

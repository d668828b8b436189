"""Exception types raised across the package."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """Non-finite or otherwise unusable numeric input."""


class MissingPredictionError(KeyError):
    """An agent has no prediction, or predictions and agents disagree."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing prediction"


class MalformedRolloutError(ValueError):
    """Rollout sequences are not time-aligned."""


class IllConditionedError(ArithmeticError):
    """Control Hessian stays non positive definite after regularization."""

    def __init__(self, min_eigenvalue: float, message: str | None = None):
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            message or f"Hessian not positive definite (min eigenvalue {self.min_eigenvalue:.3e})"
        )


class EmptyInputError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class InvalidCovarianceError(ValueError):
    pass


class InsufficientSamplesError(ValueError):
    pass


class InsufficientHistoryError(ValueError):
    pass


class SceneParseError(ValueError):
    """Base class for scene-record validation failures.

    ``path`` is a JSON-path style locator of the first failing field.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class MalformedJSONError(SceneParseError):
    pass


class MissingFieldError(SceneParseError):
    pass


class LengthMismatchError(SceneParseError):
    pass


class NonFiniteNumberError(SceneParseError):
    pass


class SchemaError(SceneParseError):
    """Wrong type or structure for a present field."""

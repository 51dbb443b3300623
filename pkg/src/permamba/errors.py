"""Error types shared across the package.

Every failure mode callers are expected to branch on gets its own class;
generic ValueError/RuntimeError never escape the public API.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """A configuration value is out of range or names an unknown option."""


class ShapeError(ValueError):
    """Tensor or grid extents do not satisfy an operation's contract."""


class DataError(ValueError):
    """A dataset file or manifest entry is malformed or missing."""


class StateError(RuntimeError):
    """An operation was called before required state existed."""


class DegenerateFieldError(ValueError):
    """A scalar field has no dynamic range to rescale."""


class ConvergenceError(RuntimeError):
    """An iterative solve hit its step cap before meeting tolerance."""

    def __init__(self, message: str, residual: float, steps: int) -> None:
        super().__init__(message)
        self.residual = residual
        self.steps = steps


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""

    def __init__(self, op: str) -> None:
        super().__init__(f"non-finite values produced by {op}")
        self.op = op

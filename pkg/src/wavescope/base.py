"""Shared building blocks: the exception hierarchy, spacetime points and the field-callable convention.

Every coefficient field in wavescope is a plain callable ``f(t, x)`` where ``t`` is an array of times with shape
``(...)`` and ``x`` an array of spatial positions with shape ``(..., d)``. The two leading shapes broadcast against
each other. Scalar fields return an array with the broadcast shape, one-forms return an array with one more trailing
axis of length ``d + 1`` holding the components ``(b_t, b_1, ..., b_d)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from numbers import Number
from typing import Callable, Optional, Sequence

import numpy as np

module_logger = logging.getLogger(__name__)

FieldFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
"""Scalar or one-form valued function of ``(t, x)``."""


# region Errors


class WavescopeError(Exception):
    """Base class of all errors raised deliberately by wavescope."""


class InvalidInputError(WavescopeError, ValueError):
    pass


class DomainError(InvalidInputError):
    """A point lies outside the (padded) domain of a metric."""


class GridError(InvalidInputError):
    """Fields that have to share a grid do not, or a grid lacks the required ghost layers."""


class CFLViolationError(InvalidInputError):
    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class DegenerateFrameError(InvalidInputError):
    """Members of a covector frame coincide or a decomposition weight vanishes."""


class SingularConstructionError(InvalidInputError):
    pass


class RankDeficiencyError(InvalidInputError):
    pass


class IllConditionedFramesError(InvalidInputError):
    pass


class GaugeError(InvalidInputError):
    """A gauge function vanishes, is not 1 on the boundary, or is time-dependent in strict mode."""


class PathCoverageError(InvalidInputError):
    """A sampled path does not cover the requested parameter interval."""


class SingularDenominatorError(WavescopeError, ZeroDivisionError):
    def __init__(self, message: str, permutation: Sequence[int]):
        super().__init__(message)
        self.permutation = tuple(permutation)


class UnsupportedConfigurationError(WavescopeError, NotImplementedError):
    pass


class DivergenceError(WavescopeError, RuntimeError):
    """An iteration failed to converge. ``last_ratio`` is the last observed contraction ratio."""

    def __init__(
        self,
        message: str,
        last_ratio: Optional[float] = None,
        iterations: Optional[int] = None,
    ):
        super().__init__(message)
        self.last_ratio = last_ratio
        self.iterations = iterations


class SmallDataViolationError(DivergenceError):
    """The data leave the regime where the Picard rearrangement is smooth (``|F1 p| > 0.5``)."""


class ConjugatePointError(WavescopeError, RuntimeError):
    def __init__(self, message: str, parameter: float):
        super().__init__(message)
        self.parameter = parameter


class NonExactnessError(WavescopeError, ValueError):
    def __init__(self, message: str, discrepancy: float):
        super().__init__(message)
        self.discrepancy = discrepancy


class InconsistencyError(WavescopeError, ValueError):
    pass


class UndeterminedError(WavescopeError, ValueError):
    pass


class ConfigError(WavescopeError, ValueError):
    """Invalid experiment configuration. ``errors`` holds ``(json_pointer, message)`` pairs."""

    def __init__(self, message: str, errors: Sequence[tuple[str, str]] = ()):
        self.errors = list(errors)
        if self.errors:
            details = "\n".join(f"  {pointer or '/'}: {msg}" for pointer, msg in self.errors)
            message = f"{message}\n{details}"
        super().__init__(message)


# endregion Errors
# region SpacetimePoint


@dataclass(frozen=True)
class SpacetimePoint:
    t: float
    """Time coordinate."""
    x: tuple[float, ...]
    """Spatial coordinates, one per spatial dimension."""

    def __post_init__(self):
        if not isinstance(self.t, Number):
            raise TypeError(f"t must be a number, got {type(self.t)!r}: {self.t!r}")
        x = tuple(float(xi) for xi in np.atleast_1d(self.x))
        if not math.isfinite(self.t) or not all(math.isfinite(xi) for xi in x):
            raise InvalidInputError(f"Spacetime point needs finite components, got t={self.t!r}, x={x!r}")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "x", x)

    @property
    def dim(self) -> int:
        return len(self.x)

    def as_array(self) -> np.ndarray:
        """Returns ``(t, x_1, ..., x_d)``."""
        return np.array((self.t,) + self.x, dtype=float)

    @classmethod
    def from_array(cls, arr: Sequence[float]) -> SpacetimePoint:
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise InvalidInputError(f"Expected a vector (t, x_1, ..., x_d), got shape {arr.shape}")
        return cls(t=float(arr[0]), x=tuple(arr[1:]))


def as_spacetime(point: SpacetimePoint | Sequence[float] | np.ndarray) -> np.ndarray:
    """Turns a :class:`SpacetimePoint` or any sequence ``(t, x_1, ..., x_d)`` into a float array."""
    if isinstance(point, SpacetimePoint):
        return point.as_array()
    arr = np.asarray(point, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise InvalidInputError(f"Expected a spacetime point (t, x_1, ..., x_d), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"Spacetime point needs finite components, got {arr!r}")
    return arr


# endregion SpacetimePoint
# region field helpers


def broadcast_shape(t: np.ndarray, x: np.ndarray) -> tuple[int, ...]:
    """Shape of a scalar field evaluated at ``(t, x)``."""
    return np.broadcast_shapes(np.shape(t), np.shape(x)[:-1])


def evaluate_scalar(fn: Optional[FieldFn], t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluates a scalar field and broadcasts the result to the full shape; ``None`` stands for zero."""
    shape = broadcast_shape(t, x)
    if fn is None:
        return np.zeros(shape)
    return np.array(np.broadcast_to(fn(t, x), shape), dtype=float)


def evaluate_one_form(fn: Optional[FieldFn], t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Like :func:`evaluate_scalar` for one-forms; the result has a trailing axis of length d + 1."""
    shape = broadcast_shape(t, x) + (np.shape(x)[-1] + 1,)
    if fn is None:
        return np.zeros(shape)
    return np.array(np.broadcast_to(fn(t, x), shape), dtype=float)


def constant_field(value: float) -> FieldFn:
    value = float(value)

    def field(t, x):
        return np.full(broadcast_shape(t, x), value)

    field.constant = value
    return field


def constant_one_form(components: Sequence[float]) -> FieldFn:
    """A one-form with constant components ``(b_t, b_1, ..., b_d)``."""
    components = np.asarray(components, dtype=float)

    def one_form(t, x):
        if np.shape(x)[-1] + 1 != components.size:
            raise InvalidInputError(
                f"One-form has {components.size} components but the points are {np.shape(x)[-1]}-dimensional."
            )
        return np.broadcast_to(components, broadcast_shape(t, x) + (components.size,)).copy()

    one_form.constant = components
    return one_form


def zero_field(t, x):
    return np.zeros(broadcast_shape(t, x))


# endregion field helpers

"""Lorentzian geometry of product metrics ``g = -dt^2 + c(x)^-2 |dx|^2``.

Covectors are arrays ``(zeta_0, zeta_1, ..., zeta_d)``, vectors ``(v^0, v^1, ..., v^d)``. The dual metric is
``g^-1 = diag(-1, c^2, ..., c^2)`` so that a covector with ``zeta_0 < 0`` is future pointing and the null
bicharacteristics of ``H = g^ij zeta_i zeta_j`` satisfy ``x' = 2 g^-1 zeta``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq, minimize_scalar

from wavescope.base import (
    DomainError,
    InvalidInputError,
    PathCoverageError,
    SpacetimePoint,
    UnsupportedConfigurationError,
    as_spacetime,
)

module_logger = logging.getLogger(__name__)

LIGHTLIKE_TOL = 1e-9
GRADIENT_STEP = 1e-6
BOUNDARY_TOL = 1e-10
CONJUGATE_CANDIDATE_RATIO = 0.1
CONJUGATE_ZERO_RATIO = 1e-4


# region ProductMetric


@dataclass(kw_only=True)
class ProductMetric:
    speed: Callable[[np.ndarray], np.ndarray]
    """Sound speed ``c(x)`` for spatial points of shape ``(..., d)``."""
    dim: int
    """Number of spatial dimensions d."""
    bounds: tuple[tuple[float, float], ...]
    """The padded domain on which the metric is defined, one interval per spatial axis."""
    speed_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    """Analytic gradient of c, shape ``(..., d)``. Central differences are used if missing."""
    constant_speed: Optional[float] = None
    """Set for homogeneous media; enables closed-form rays."""
    name: str = "custom"
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise InvalidInputError(f"Spatial dimension must be 1, 2 or 3, got {self.dim!r}")
        if not callable(self.speed):
            raise TypeError(f"speed must be callable, got {type(self.speed)!r}")
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(bounds) != self.dim:
            raise InvalidInputError(f"Expected {self.dim} intervals as bounds, got {len(bounds)}")
        for lo, hi in bounds:
            if not hi > lo:
                raise InvalidInputError(f"Empty interval in bounds: ({lo}, {hi})")
        self.bounds = bounds
        if self.constant_speed is not None:
            self.constant_speed = float(self.constant_speed)
            if not self.constant_speed > 0:
                raise InvalidInputError(f"Sound speed must be positive, got {self.constant_speed}")

    @classmethod
    def constant(
        cls,
        speed: float = 1.0,
        dim: int = 3,
        bounds: Optional[Sequence[tuple[float, float]]] = None,
    ) -> ProductMetric:
        speed = float(speed)
        if bounds is None:
            bounds = ((-20.0, 20.0),) * dim

        def c(x):
            return np.full(np.shape(x)[:-1], speed)

        return cls(
            speed=c,
            dim=dim,
            bounds=tuple(bounds),
            speed_gradient=lambda x: np.zeros(np.shape(x)),
            constant_speed=speed,
            name="minkowski" if speed == 1.0 else "constant",
            parameters=dict(speed=speed),
        )

    @classmethod
    def minkowski(cls, dim: int = 3, bounds: Optional[Sequence[tuple[float, float]]] = None) -> ProductMetric:
        return cls.constant(1.0, dim=dim, bounds=bounds)

    @classmethod
    def gaussian(
        cls,
        amplitude: float,
        dim: int = 3,
        width: float = 1.0,
        center: Optional[Sequence[float]] = None,
        base: float = 1.0,
        bounds: Optional[Sequence[tuple[float, float]]] = None,
    ) -> ProductMetric:
        """Gaussian lens ``c(x) = base + amplitude * exp(-|x - center|^2 / width^2)``.

        A positive amplitude gives a fast (defocusing) lens, a negative one a slow, focusing lens.
        """
        amplitude, width, base = float(amplitude), float(width), float(base)
        center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        if center.shape != (dim,):
            raise InvalidInputError(f"center must have {dim} components, got {center.shape}")
        if base + min(amplitude, 0.0) <= 0:
            raise InvalidInputError(f"Lens with base {base} and amplitude {amplitude} has a non-positive speed")
        if bounds is None:
            bounds = ((-10.0, 10.0),) * dim

        def c(x):
            r2 = np.sum((np.asarray(x) - center) ** 2, axis=-1)
            return base + amplitude * np.exp(-r2 / width**2)

        def grad_c(x):
            diff = np.asarray(x) - center
            r2 = np.sum(diff**2, axis=-1)
            return (-2.0 * amplitude / width**2 * np.exp(-r2 / width**2))[..., None] * diff

        return cls(
            speed=c,
            dim=dim,
            bounds=tuple(bounds),
            speed_gradient=grad_c,
            name="gaussian-lens" if amplitude >= 0 else "focusing-lens",
            parameters=dict(amplitude=amplitude, width=width, center=center.tolist(), base=base),
        )

    @property
    def is_constant(self) -> bool:
        return self.constant_speed is not None

    def c(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.constant_speed is not None:
            return np.full(x.shape[:-1], self.constant_speed)
        values = np.asarray(self.speed(x), dtype=float)
        if np.any(values <= 0):
            raise InvalidInputError("The sound speed must be positive everywhere.")
        return values

    def grad_c(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.constant_speed is not None:
            return np.zeros(x.shape)
        if self.speed_gradient is not None:
            return np.asarray(self.speed_gradient(x), dtype=float)
        grad = np.empty(x.shape)
        for k in range(self.dim):
            step = np.zeros(self.dim)
            step[k] = GRADIENT_STEP
            grad[..., k] = (self.c(x + step) - self.c(x - step)) / (2 * GRADIENT_STEP)
        return grad

    def max_speed(self, samples: int = 33) -> float:
        """Maximum of c over a lattice spanning the bounds."""
        if self.constant_speed is not None:
            return self.constant_speed
        axes = [np.linspace(lo, hi, samples) for lo, hi in self.bounds]
        lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return float(np.max(self.c(lattice)))

    def contains(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray | bool:
        """Whether spatial points lie in the padded domain."""
        x = np.asarray(x, dtype=float)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        inside = np.all((x >= lo - tol) & (x <= hi + tol), axis=-1)
        return bool(inside) if inside.ndim == 0 else inside

    def bound_distance(self, x: np.ndarray) -> np.ndarray:
        """Max-norm signed distance to the padded domain: negative inside, zero on its faces."""
        x = np.asarray(x, dtype=float)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.max(np.concatenate([lo - x, x - hi], axis=-1), axis=-1)

    def clip(self, x: np.ndarray) -> np.ndarray:
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.clip(x, lo, hi)

    def check_point(self, point: SpacetimePoint | Sequence[float]) -> np.ndarray:
        arr = as_spacetime(point)
        if arr.size != self.dim + 1:
            raise InvalidInputError(f"Expected a point in {self.dim}+1 dimensions, got {arr.size} components")
        if not self.contains(arr[1:]):
            raise DomainError(f"Point {arr.tolist()} lies outside the padded domain {self.bounds}")
        return arr

    def inverse_diagonal(self, x: np.ndarray) -> np.ndarray:
        """Diagonal of ``g^-1`` at spatial points, shape ``(..., d + 1)``."""
        c2 = self.c(x) ** 2
        diag = np.repeat(c2[..., None], self.dim + 1, axis=-1)
        diag[..., 0] = -1.0
        return diag

    def as_dict(self) -> dict:
        return dict(name=self.name, dim=self.dim, bounds=[list(b) for b in self.bounds], parameters=self.parameters)


# endregion ProductMetric
# region Box


@dataclass(frozen=True)
class Box:
    """Axis-aligned spatial domain, e.g. the observation domain Omega inside the padded domain."""

    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        for lo, hi in bounds:
            if not hi > lo:
                raise InvalidInputError(f"Empty interval in box: ({lo}, {hi})")
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def unit(cls, dim: int) -> Box:
        return cls(((0.0, 1.0),) * dim)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    def _face_distances(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.concatenate([self.lower - x, x - self.upper], axis=-1)

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        """Negative inside, zero on the boundary, positive outside (max-norm type)."""
        return np.max(self._face_distances(x), axis=-1)

    def contains(self, x: np.ndarray, tol: float = 0.0):
        return self.signed_distance(x) <= tol

    def outward_normal(self, x: np.ndarray) -> np.ndarray:
        """Outward unit normal of the face closest to (or most violated by) a single point."""
        face = int(np.argmax(self._face_distances(x)))
        normal = np.zeros(self.dim)
        normal[face % self.dim] = -1.0 if face < self.dim else 1.0
        return normal


# endregion Box
# region pointwise algebra


class CausalType(str, Enum):
    LIGHTLIKE = "lightlike"
    TIMELIKE = "timelike"
    SPACELIKE = "spacelike"


class TimeOrientation(str, Enum):
    FUTURE = "future"
    PAST = "past"
    NONE = "none"


class CausalCharacter(NamedTuple):
    kind: CausalType
    orientation: TimeOrientation


def _as_components(v: Sequence[float], dim: int) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape[-1:] != (dim + 1,):
        raise InvalidInputError(f"Expected {dim + 1} components, got shape {arr.shape}")
    return arr


def raise_lower(
    metric: ProductMetric,
    point: SpacetimePoint | Sequence[float],
    v: Sequence[float],
    direction: str = "raise",
) -> np.ndarray:
    """Musical isomorphisms at a point: ``direction='raise'`` maps a covector to the vector ``g^-1 zeta``,
    ``direction='lower'`` maps a vector to the covector ``g v``."""
    arr = metric.check_point(point)
    v = _as_components(v, metric.dim)
    g_inv = metric.inverse_diagonal(arr[1:])
    if direction == "raise":
        return g_inv * v
    if direction == "lower":
        return v / g_inv
    raise ValueError(f"direction must be 'raise' or 'lower', got {direction!r}")


def inner_product(
    metric: ProductMetric,
    point: SpacetimePoint | Sequence[float],
    a: Sequence[float],
    b: Sequence[float],
    covectors: bool = True,
) -> float:
    """``g^ij a_i b_j`` for covectors (default) or ``g_ij a^i b^j`` for vectors."""
    arr = metric.check_point(point)
    g_inv = metric.inverse_diagonal(arr[1:])
    a, b = _as_components(a, metric.dim), _as_components(b, metric.dim)
    weights = g_inv if covectors else 1.0 / g_inv
    return float(np.sum(weights * a * b))


def hamiltonian(metric: ProductMetric, points: np.ndarray, covectors: np.ndarray) -> np.ndarray:
    """``H = g^ij zeta_i zeta_j`` evaluated along arrays of spacetime points and covectors."""
    points = np.asarray(points, dtype=float)
    covectors = np.asarray(covectors, dtype=float)
    g_inv = metric.inverse_diagonal(points[..., 1:])
    return np.sum(g_inv * covectors**2, axis=-1)


def classify_covector(
    metric: ProductMetric,
    point: SpacetimePoint | Sequence[float],
    zeta: Sequence[float],
    tol: float = LIGHTLIKE_TOL,
) -> CausalCharacter:
    """Causal type from the sign of ``g^ij zeta_i zeta_j`` (normalized by the Euclidean norm) and time
    orientation from the sign of ``zeta_0``; spacelike covectors have no orientation."""
    arr = metric.check_point(point)
    zeta = _as_components(zeta, metric.dim)
    norm2 = float(np.dot(zeta, zeta))
    if norm2 == 0.0:
        raise InvalidInputError("Cannot classify the zero covector.")
    h = float(hamiltonian(metric, arr, zeta)) / norm2
    if abs(h) <= tol:
        kind = CausalType.LIGHTLIKE
    elif h < 0:
        kind = CausalType.TIMELIKE
    else:
        return CausalCharacter(CausalType.SPACELIKE, TimeOrientation.NONE)
    orientation = TimeOrientation.FUTURE if zeta[0] < 0 else TimeOrientation.PAST
    return CausalCharacter(kind, orientation)


def in_causal_future(metric: ProductMetric, x: Sequence[float], y: Sequence[float]) -> bool:
    """Whether y lies in J+(x); homogeneous media only."""
    if not metric.is_constant:
        raise UnsupportedConfigurationError("Causal relations are only available for constant sound speed.")
    x, y = as_spacetime(x), as_spacetime(y)
    dt = y[0] - x[0]
    return bool(dt >= 0 and dt * metric.constant_speed >= np.linalg.norm(y[1:] - x[1:]))


def time_separation(metric: ProductMetric, x: Sequence[float], y: Sequence[float]) -> float:
    """Lorentzian time separation ``tau(x, y)``; zero when y is not in the causal future of x."""
    if not in_causal_future(metric, x, y):
        return 0.0
    x, y = as_spacetime(x), as_spacetime(y)
    dt = y[0] - x[0]
    r = np.linalg.norm(y[1:] - x[1:]) / metric.constant_speed
    return math.sqrt(max(dt * dt - r * r, 0.0))


# endregion pointwise algebra
# region Bicharacteristic


@dataclass(kw_only=True)
class Bicharacteristic:
    s: np.ndarray
    """Strictly increasing flow parameters."""
    points: np.ndarray
    """Spacetime positions, shape ``(N, d + 1)``."""
    covectors: np.ndarray
    """Covectors along the path, shape ``(N, d + 1)``."""
    metric: ProductMetric
    truncated: bool = False
    """True if the path reached the padded domain's faces before the requested parameter; it then ends on them."""
    underresolved: bool = False
    """True if some step was accepted at the smallest step size without meeting the error tolerance."""
    entry: Optional[float] = None
    """Parameter at which the path enters the observation domain (t^o)."""
    exit: Optional[float] = None
    """First subsequent parameter at which it leaves the domain (t^b)."""
    conjugate: Optional[float] = None
    """First conjugate parameter, if one was detected."""

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        self.covectors = np.asarray(self.covectors, dtype=float)
        n = self.s.size
        if n < 2:
            raise InvalidInputError("A bicharacteristic needs at least two samples.")
        if self.points.shape != (n, self.metric.dim + 1) or self.covectors.shape != self.points.shape:
            raise InvalidInputError(
                f"Samples have inconsistent shapes: s {self.s.shape}, points {self.points.shape}, "
                f"covectors {self.covectors.shape}"
            )
        if np.any(np.diff(self.s) <= 0):
            raise InvalidInputError("Flow parameters must be strictly increasing.")

    @property
    def dim(self) -> int:
        return self.metric.dim

    @property
    def start(self) -> float:
        return float(self.s[0])

    @property
    def end(self) -> float:
        return float(self.s[-1])

    def velocities(self) -> np.ndarray:
        """``x' = 2 g^-1 zeta`` at the samples."""
        return 2.0 * self.metric.inverse_diagonal(self.points[:, 1:]) * self.covectors

    def hamiltonian_drift(self) -> float:
        return float(np.max(np.abs(hamiltonian(self.metric, self.points, self.covectors))))

    @cached_property
    def _spline(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.s, self.points, self.velocities(), axis=0)

    @cached_property
    def _velocity_spline(self):
        return self._spline.derivative()

    def covers(self, s0: float, s1: float, tol: float = 1e-12) -> bool:
        lo, hi = min(s0, s1), max(s0, s1)
        return lo >= self.start - tol and hi <= self.end + tol

    def _check_coverage(self, s: float | np.ndarray):
        s_arr = np.atleast_1d(s)
        if not self.covers(float(np.min(s_arr)), float(np.max(s_arr))):
            raise PathCoverageError(
                f"Parameters [{np.min(s_arr)}, {np.max(s_arr)}] are not covered by the path "
                f"[{self.start}, {self.end}]"
            )

    def position(self, s: float | np.ndarray) -> np.ndarray:
        """Cubic Hermite interpolation of the spacetime position."""
        self._check_coverage(s)
        return self._spline(np.clip(s, self.start, self.end))

    def velocity(self, s: float | np.ndarray) -> np.ndarray:
        """Derivative of :meth:`position`; consistent with it to rounding."""
        self._check_coverage(s)
        return self._velocity_spline(np.clip(s, self.start, self.end))

    def as_dict(self) -> dict:
        return dict(
            s=self.s,
            points=self.points,
            covectors=self.covectors,
            truncated=self.truncated,
            underresolved=self.underresolved,
            entry=self.entry,
            exit=self.exit,
            conjugate=self.conjugate,
            hamiltonian_drift=self.hamiltonian_drift(),
        )


def _flow(metric: ProductMetric, y: np.ndarray) -> np.ndarray:
    """Hamilton's equations for ``H = -zeta_0^2 + c(x)^2 |zeta'|^2``."""
    n = metric.dim + 1
    x, zeta0, xi = y[1:n], y[n], y[n + 1 :]
    c = float(metric.c(x))
    grad = metric.grad_c(x)
    xi2 = float(np.dot(xi, xi))
    dy = np.empty_like(y)
    dy[0] = -2.0 * zeta0
    dy[1:n] = 2.0 * c * c * xi
    dy[n] = 0.0
    dy[n + 1 :] = -2.0 * c * grad * xi2
    return dy


def _rk4(metric: ProductMetric, y: np.ndarray, h: float, rhs=_flow) -> np.ndarray:
    k1 = rhs(metric, y)
    k2 = rhs(metric, y + 0.5 * h * k1)
    k3 = rhs(metric, y + 0.5 * h * k2)
    k4 = rhs(metric, y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _reproject(metric: ProductMetric, y: np.ndarray) -> np.ndarray:
    """Moves zeta back onto the null cone by adjusting |zeta_0|."""
    n = metric.dim + 1
    c = float(metric.c(y[1:n]))
    y = y.copy()
    y[n] = math.copysign(c * np.linalg.norm(y[n + 1 :]), y[n])
    return y


def _exit_parameter(metric: ProductMetric, x: np.ndarray, velocity: np.ndarray) -> float:
    """Parameter at which the straight line ``x + s velocity`` reaches the faces of the padded domain."""
    candidates = []
    for k, (lo, hi) in enumerate(metric.bounds):
        if velocity[k] > 0:
            candidates.append((hi - x[k]) / velocity[k])
        elif velocity[k] < 0:
            candidates.append((lo - x[k]) / velocity[k])
    return max(min(candidates), 0.0) if candidates else math.inf


def _advance(metric: ProductMetric, y: np.ndarray, h: float) -> tuple[np.ndarray, float]:
    """One RK4 step compared with two half steps; returns the extrapolated state and the error estimate."""
    full = _rk4(metric, y, h)
    half = _rk4(metric, _rk4(metric, y, h / 2), h / 2)
    return half + (half - full) / 15.0, float(np.max(np.abs(half - full))) / 15.0


def _step_to_bounds(metric: ProductMetric, y: np.ndarray, h: float) -> tuple[float, np.ndarray]:
    """The partial step in ``(0, h]`` that ends on the faces of the padded domain, and the state there."""
    n = metric.dim + 1

    def distance(u):
        return float(metric.bound_distance(_advance(metric, y, u)[0][1:n]))

    if distance(0.0) >= 0:
        u = 0.0
    elif distance(h) <= 0:
        u = h
    else:
        u = brentq(distance, 0.0, h, xtol=1e-15, rtol=1e-14)
    state = _advance(metric, y, u)[0] if u > 0 else y.copy()
    state[1:n] = metric.clip(state[1:n])
    return u, state


def _integrate_forward(
    metric: ProductMetric,
    x0: np.ndarray,
    zeta0: np.ndarray,
    s_max: float,
    ds: float,
    step_tol: float,
    reproject_every: int,
    stop: Optional[Callable[[np.ndarray], bool]],
    max_halvings: int = 10,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool, bool]:
    n = metric.dim + 1
    if metric.is_constant:
        n_steps = max(int(math.ceil(s_max / ds - 1e-9)), 1)
        s = np.append(np.arange(n_steps) * ds, s_max)
        velocity = 2.0 * metric.inverse_diagonal(x0[1:]) * zeta0
        inside = metric.contains(x0[1:] + s[:, None] * velocity[1:])
        truncated = not np.all(inside)
        if truncated:
            s = s[: int(np.argmin(inside))]
            s_bound = _exit_parameter(metric, x0[1:], velocity[1:])
            if s_bound > s[-1] + BOUNDARY_TOL:
                s = np.append(s, s_bound)
        points = x0 + s[:, None] * velocity
        if truncated:
            points[-1, 1:] = metric.clip(points[-1, 1:])
        covectors = np.broadcast_to(zeta0, points.shape).copy()
        last = s.size
        if stop is not None:
            stopped = np.flatnonzero([stop(p) for p in points])
            if stopped.size:
                last = int(stopped[0]) + 1
                truncated = False
        last = max(last, 2)
        return s[:last], points[:last], covectors[:last], truncated, False

    y = np.concatenate([x0, zeta0])
    s_values, states = [0.0], [y]
    s, steps, truncated, underresolved = 0.0, 0, False, False
    end_tol = 1e-12 * max(1.0, s_max)
    while s < s_max - end_tol:
        h = min(ds, s_max - s)
        h0 = float(np.dot(metric.inverse_diagonal(y[1:n]) * y[n:], y[n:]))
        for halving in range(max_halvings + 1):
            candidate, error = _advance(metric, y, h)
            h1 = float(np.dot(metric.inverse_diagonal(candidate[1:n]) * candidate[n:], candidate[n:]))
            scale = max(1.0, float(np.max(np.abs(y))))
            if error <= step_tol * scale and abs(h1 - h0) <= step_tol * scale**2:
                break
            if halving == max_halvings:
                underresolved = True
                module_logger.warning(f"Step at s={s:.6g} accepted with error {error:.3g} after {halving} halvings.")
                break
            h /= 2.0
        steps += 1
        if reproject_every and steps % reproject_every == 0:
            candidate = _reproject(metric, candidate)
        if not metric.contains(candidate[1:n]):
            truncated = True
            h, candidate = _step_to_bounds(metric, y, h)
            if h <= BOUNDARY_TOL:
                break
        y = candidate
        s += h
        s_values.append(s)
        states.append(y)
        if truncated or (stop is not None and stop(y[:n])):
            break
    if len(states) < 2:
        raise InvalidInputError("The ray leaves the padded domain immediately.")
    states = np.array(states)
    return np.array(s_values), states[:, :n], states[:, n:], truncated, underresolved


def trace_bicharacteristic(
    metric: ProductMetric,
    x0: SpacetimePoint | Sequence[float],
    zeta0: Sequence[float],
    s_max: float,
    ds: float = 1e-2,
    step_tol: float = 1e-11,
    lightlike_tol: float = LIGHTLIKE_TOL,
    reproject_every: int = 100,
    stop: Optional[Callable[[np.ndarray], bool]] = None,
    domain: Optional[Box] = None,
    max_halvings: int = 10,
) -> Bicharacteristic:
    """Integrates the null bicharacteristic through ``(x0, zeta0)``.

    The flow is integrated with classical Runge-Kutta steps of size ``ds``; each step is compared with two half
    steps and halved until the Richardson error estimate and the change of the Hamiltonian are below
    ``step_tol``. The accepted value is the Richardson extrapolation. Every ``reproject_every`` steps zeta is
    projected back onto the null cone. Homogeneous media use the exact straight-line flow.

    Args:
        metric: The product metric.
        x0: Starting point, must lie in the padded domain.
        zeta0: Starting covector, lightlike at x0.
        s_max:
            Flow parameter to integrate to. Negative values trace backwards; the result is then sampled on
            ``[s_max, 0]`` in increasing order.
        ds: Nominal step.
        step_tol: Local error tolerance.
        lightlike_tol: Tolerance for ``|H| / |zeta|^2`` at the start.
        reproject_every: Number of steps between null-cone projections. 0 disables projection.
        stop:
            Optional predicate on spacetime points. Integration ends after the first sample for which it is
            true.
        domain: If given, entry and exit parameters are annotated via :func:`boundary_crossings`.
        max_halvings: Step halvings before a step is accepted above ``step_tol`` and the path is flagged.

    Returns:
        The sampled path. ``truncated`` is set if it reached the faces of the padded domain before ``s_max``; the
        last sample then lies on them. ``underresolved`` flags steps accepted without meeting ``step_tol``.

    Raises:
        InvalidInputError: If zeta0 is not lightlike at x0.
        DomainError: If x0 lies outside the padded domain.
    """
    x0 = metric.check_point(x0)
    zeta0 = _as_components(zeta0, metric.dim)
    if s_max == 0:
        raise InvalidInputError("s_max must be nonzero.")
    if ds <= 0:
        raise InvalidInputError(f"Step must be positive, got {ds}")
    norm2 = float(np.dot(zeta0, zeta0))
    if norm2 == 0 or abs(float(hamiltonian(metric, x0, zeta0))) / norm2 > lightlike_tol:
        raise InvalidInputError(f"Covector {zeta0.tolist()} is not lightlike at {x0.tolist()}")
    backwards = s_max < 0
    s, points, covectors, truncated, underresolved = _integrate_forward(
        metric,
        x0,
        -zeta0 if backwards else zeta0,
        abs(s_max),
        ds,
        step_tol,
        reproject_every,
        stop,
        max_halvings=max_halvings,
    )
    if backwards:
        s, points, covectors = -s[::-1], points[::-1], -covectors[::-1]
    path = Bicharacteristic(
        s=s, points=points, covectors=covectors, metric=metric, truncated=truncated, underresolved=underresolved
    )
    if truncated:
        module_logger.debug(f"Ray from {x0.tolist()} left the padded domain at s={s[0] if backwards else s[-1]:.6g}")
    if domain is not None:
        crossings = boundary_crossings(path, domain)
        path.entry, path.exit = crossings.entry, crossings.exit
    return path


# endregion Bicharacteristic
# region crossings and conjugate points


class Crossings(NamedTuple):
    entry: Optional[float]
    exit: Optional[float]
    entry_transversal: bool
    exit_transversal: bool

    @property
    def present(self) -> bool:
        return self.entry is not None


def _refine_crossing(path: Bicharacteristic, domain: Box, a: float, b: float) -> float:
    def distance(s):
        return float(domain.signed_distance(path.position(s)[1:]))

    fa, fb = distance(a), distance(b)
    if fb == 0.0:
        return b
    if fa == 0.0:
        return a
    return brentq(distance, a, b, xtol=1e-14, rtol=1e-14)


def _is_transversal(path: Bicharacteristic, domain: Box, s: float, tol: float) -> bool:
    position = path.position(s)[1:]
    velocity = path.velocity(s)[1:]
    speed = np.linalg.norm(velocity)
    if speed == 0:
        return False
    return abs(float(np.dot(velocity, domain.outward_normal(position)))) / speed > tol


def boundary_crossings(
    path: Bicharacteristic,
    domain: Box,
    transversal_tol: float = 1e-6,
    boundary_tol: float = BOUNDARY_TOL,
) -> Crossings:
    """Entry parameter t^o (first parameter in the closed domain) and the first subsequent exit t^b.

    The sign changes of the signed distance on the samples are refined by root finding on the interpolated path.
    A path that starts inside has ``entry = s[0]``; it is a boundary entry only if that sample lies on a face to
    within ``boundary_tol``. Likewise a path that ends on a face, as traces stopped by the padded domain do, exits
    at its last sample.
    """
    if domain.dim != path.dim:
        raise InvalidInputError(f"Domain is {domain.dim}-dimensional but the path lives in {path.dim} dimensions")
    distance = domain.signed_distance(path.points[:, 1:])
    inside = distance <= 0
    if not np.any(inside):
        return Crossings(None, None, False, False)
    k_in = int(np.argmax(inside))
    if k_in == 0:
        entry = float(path.s[0])
        entry_transversal = bool(distance[0] >= -boundary_tol) and _is_transversal(path, domain, entry, transversal_tol)
    else:
        entry = _refine_crossing(path, domain, path.s[k_in - 1], path.s[k_in])
        entry_transversal = _is_transversal(path, domain, entry, transversal_tol)
    outside_after = np.flatnonzero(~inside[k_in:])
    if outside_after.size == 0:
        if k_in < path.s.size - 1 and distance[-1] >= -boundary_tol:
            exit_ = float(path.s[-1])
            return Crossings(entry, exit_, entry_transversal, _is_transversal(path, domain, exit_, transversal_tol))
        return Crossings(entry, None, entry_transversal, False)
    k_out = k_in + int(outside_after[0])
    exit_ = _refine_crossing(path, domain, path.s[k_out - 1], path.s[k_out])
    return Crossings(entry, exit_, entry_transversal, _is_transversal(path, domain, exit_, transversal_tol))


def _spatial_flow(metric: ProductMetric, y: np.ndarray) -> np.ndarray:
    d = metric.dim
    x, xi = y[:d], y[d:]
    c = float(metric.c(x))
    return np.concatenate([2.0 * c * c * xi, -2.0 * c * metric.grad_c(x) * float(np.dot(xi, xi))])


def _jacobi_flow(metric: ProductMetric, state: np.ndarray, eps: float = 1e-7) -> np.ndarray:
    """Base spatial flow plus its linearization applied to the deviation fields (columns 1..)."""
    base = state[:, 0]
    out = np.empty_like(state)
    out[:, 0] = _spatial_flow(metric, base)
    scale = max(1.0, float(np.linalg.norm(base)))
    for col in range(1, state.shape[1]):
        delta = state[:, col]
        norm = float(np.linalg.norm(delta))
        if norm == 0:
            out[:, col] = 0.0
            continue
        h = eps * scale / norm
        out[:, col] = (_spatial_flow(metric, base + h * delta) - _spatial_flow(metric, base - h * delta)) / (2 * h)
    return out


def _transverse_spread(state: np.ndarray, d: int) -> np.ndarray:
    """Singular values of the position deviations with their component along the ray removed, largest first."""
    xi = state[d:, 0]
    direction = xi / np.linalg.norm(xi)
    deviations = state[:d, 1:]
    projected = deviations - np.outer(direction, direction @ deviations)
    return np.linalg.svd(projected, compute_uv=False)


def detect_conjugate_point(path: Bicharacteristic, metric: Optional[ProductMetric] = None) -> Optional[float]:
    """First parameter after the start of the path at which a transverse Jacobi field vanishes.

    The Jacobi fields start with zero position deviation and unit covector deviations orthogonal to the initial
    spatial covector. Their transverse position deviations span the neighbouring rays; a conjugate point is a
    zero of the smallest singular value of that block, whatever its multiplicity. Local minima of the sampled
    singular value below a tenth of the largest spread seen so far are refined by minimizing over one
    re-integrated step on each side, and reported if the minimum is zero relative to that spread.
    """
    metric = path.metric if metric is None else metric
    if metric.is_constant or metric.dim == 1:
        return None
    d = metric.dim
    base = np.concatenate([path.points[0, 1:], path.covectors[0, 1:]])
    xi0 = base[d:] / np.linalg.norm(base[d:])
    q, _ = np.linalg.qr(np.column_stack([xi0, np.eye(d)]))
    state = np.zeros((2 * d, d))
    state[:, 0] = base
    state[d:, 1:] = q[:, 1:d]

    def rhs(_metric, flat):
        return _jacobi_flow(_metric, flat.reshape(2 * d, d)).ravel()

    def smallest_after(start: np.ndarray, h: float) -> float:
        return float(_transverse_spread(_rk4(metric, start.ravel(), h, rhs=rhs).reshape(2 * d, d), d)[-1])

    states, smallest, peaks = [state], [0.0], [0.0]
    for k in range(1, path.s.size):
        h = float(path.s[k] - path.s[k - 1])
        state = _rk4(metric, state.ravel(), h, rhs=rhs).reshape(2 * d, d)
        spread = _transverse_spread(state, d)
        states.append(state)
        smallest.append(float(spread[-1]))
        peaks.append(max(peaks[-1], float(spread[0])))
        j = k - 1
        if j < 1 or not smallest[j] <= smallest[j - 1] or not smallest[j] < smallest[k]:
            continue
        if smallest[j] > CONJUGATE_CANDIDATE_RATIO * peaks[j]:
            continue
        lo, hi = float(path.s[j - 1]), float(path.s[k])
        result = minimize_scalar(
            lambda s: smallest_after(states[j - 1], s - lo),
            bounds=(lo, hi),
            method="bounded",
            options=dict(xatol=1e-12),
        )
        if result.fun <= CONJUGATE_ZERO_RATIO * peaks[j]:
            conjugate = float(result.x)
            module_logger.debug(f"Conjugate point detected at s={conjugate:.6g} (spread {result.fun:.3g})")
            return conjugate
    return None


# endregion crossings and conjugate points

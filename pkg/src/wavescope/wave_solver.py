"""Finite-difference solver for the Westervelt-type boundary value problem

    box_g p + <b, grad p> + h p - sum_k beta_k d_t^2(p^k) = G   in (0, T) x Omega,
    p = f on (0, T) x boundary,  p = d_t p = 0 at t = 0,

with ``box_g = d_t^2 - Delta_g``, ``Delta_g u = c^d div(c^(2-d) grad u)`` and
``<b, grad p> = b_t d_t p - c^2 sum_k b_k d_k p``. Nonlinear solves run in 1+1 dimensions, linear solves also in
2+1 dimensions. Time stepping is explicit leapfrog on a uniform grid; the damping term is centered with
``(p^(n+1) - p^(n-1)) / (2 dt)``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from wavescope.base import (
    CFLViolationError,
    DivergenceError,
    FieldFn,
    GridError,
    InvalidInputError,
    SmallDataViolationError,
    UnsupportedConfigurationError,
    evaluate_one_form,
    evaluate_scalar,
)
from wavescope.lorentz_geometry import ProductMetric
from wavescope.utils import sha256_of, store_csv, store_json

module_logger = logging.getLogger(__name__)

F1_LIMIT = 0.5
RESIDUAL_FLOOR = 1e-12
"""Relative residuals below this are roundoff."""


# region Grid


@dataclass(frozen=True, kw_only=True)
class Grid:
    cells: tuple[int, ...]
    """Number of cells per spatial axis."""
    nt: int
    """Number of time steps; the grid has ``nt + 1`` time levels."""
    duration: float
    length: tuple[float, ...] = (1.0,)
    origin: tuple[float, ...] = (0.0,)
    cfl: float = 0.5
    max_speed: float = 1.0

    def __post_init__(self):
        cells = tuple(int(n) for n in np.atleast_1d(self.cells))
        length = tuple(float(v) for v in np.atleast_1d(self.length))
        origin = tuple(float(v) for v in np.atleast_1d(self.origin))
        if len(length) == 1 and len(cells) > 1:
            length = length * len(cells)
        if len(origin) == 1 and len(cells) > 1:
            origin = origin * len(cells)
        if not 1 <= len(cells) <= 2:
            raise UnsupportedConfigurationError(f"Grids are 1- or 2-dimensional, got {len(cells)} axes")
        if len(length) != len(cells) or len(origin) != len(cells):
            raise GridError("cells, length and origin need one entry per axis")
        if any(n < 2 for n in cells):
            raise GridError(f"Each axis needs at least 2 cells (ghost layers for the stencils), got {cells}")
        if self.nt < 2:
            raise GridError(f"Need at least 2 time steps, got {self.nt}")
        if not self.duration > 0 or any(v <= 0 for v in length):
            raise GridError("Duration and lengths must be positive")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "duration", float(self.duration))

    @classmethod
    def build(
        cls,
        cells: int | Sequence[int],
        duration: float,
        max_speed: float = 1.0,
        cfl: float = 0.5,
        length: float | Sequence[float] = 1.0,
        origin: float | Sequence[float] = 0.0,
    ) -> Grid:
        """Chooses the number of time steps from the CFL number: ``dt <= cfl * min(dx) / (max_speed sqrt(d))``."""
        cells = tuple(int(n) for n in np.atleast_1d(cells))
        length = tuple(float(v) for v in np.atleast_1d(length))
        if len(length) == 1:
            length = length * len(cells)
        dx = min(L / n for L, n in zip(length, cells))
        dt_max = cfl * dx / (max_speed * math.sqrt(len(cells)))
        nt = max(int(math.ceil(duration / dt_max - 1e-9)), 2)
        return cls(
            cells=cells,
            nt=nt,
            duration=duration,
            length=length,
            origin=origin,
            cfl=cfl,
            max_speed=max_speed,
        )

    @classmethod
    def for_metric(
        cls, metric: ProductMetric, cells: int | Sequence[int], duration: float, cfl: float = 0.5, **kwargs
    ) -> Grid:
        return cls.build(cells, duration, max_speed=metric.max_speed(), cfl=cfl, **kwargs)

    def refine(self, factor: int = 2) -> Grid:
        return Grid.build(
            tuple(n * factor for n in self.cells),
            self.duration,
            max_speed=self.max_speed,
            cfl=self.cfl,
            length=self.length,
            origin=self.origin,
        )

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def dt(self) -> float:
        return self.duration / self.nt

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.length, self.cells))

    @property
    def shape(self) -> tuple[int, ...]:
        """Number of spatial nodes per axis."""
        return tuple(n + 1 for n in self.cells)

    @property
    def field_shape(self) -> tuple[int, ...]:
        return (self.nt + 1,) + self.shape

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    @property
    def axes(self) -> list[np.ndarray]:
        return [o + np.arange(n + 1) * h for o, n, h in zip(self.origin, self.cells, self.dx)]

    @property
    def bounds(self) -> list[tuple[float, float]]:
        return [(o, o + L) for o, L in zip(self.origin, self.length)]

    @property
    def nodes(self) -> np.ndarray:
        """Spatial node coordinates, shape ``(*shape, d)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.dim):
            index = [slice(None)] * self.dim
            index[axis] = 0
            mask[tuple(index)] = True
            index[axis] = -1
            mask[tuple(index)] = True
        return mask

    @property
    def boundary_points(self) -> np.ndarray:
        """Boundary node coordinates in flat index order, shape ``(n_boundary, d)``."""
        return self.nodes[self.boundary_mask]

    @property
    def interior(self) -> tuple[slice, ...]:
        return (slice(1, -1),) * self.dim

    def spacetime_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``(t, x)`` arrays broadcasting to the field shape, for evaluating field callables."""
        t = self.times.reshape((-1,) + (1,) * self.dim)
        x = self.nodes[None, ...]
        return t, x

    def as_dict(self) -> dict:
        return dict(
            cells=list(self.cells),
            nt=self.nt,
            duration=self.duration,
            length=list(self.length),
            origin=list(self.origin),
            dt=self.dt,
            dx=list(self.dx),
            cfl=self.cfl,
        )


# endregion Grid
# region sources and media


def bump_window(t: np.ndarray, start: float, duration: float, power: int = 8) -> np.ndarray:
    """``sin(pi (t - start) / duration)^power`` on the window, zero elsewhere; of class C^(power - 1)."""
    t = np.asarray(t, dtype=float)
    phase = (t - start) / duration
    inside = (phase > 0) & (phase < 1)
    return np.where(inside, np.sin(np.pi * np.clip(phase, 0, 1)) ** power, 0.0)


@dataclass(kw_only=True)
class BoundarySource:
    waveform: Callable[[np.ndarray], np.ndarray]
    """Time profile g(t); the Dirichlet data are ``amplitude * g(t)`` on the selected boundary nodes."""
    amplitude: float = 1.0
    nodes: Optional[tuple[int, ...]] = (0,)
    """Indices into the grid's boundary nodes (flat order); None selects all boundary nodes."""
    smoothness: int = 6
    """Number of continuous derivatives of the waveform."""
    support: tuple[float, float] = (0.0, math.inf)
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    """Optional analytic derivative of the waveform."""
    name: str = "custom"
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if not callable(self.waveform):
            raise TypeError(f"waveform must be callable, got {type(self.waveform)!r}")
        self.amplitude = float(self.amplitude)
        if not math.isfinite(self.amplitude):
            raise InvalidInputError(f"Amplitude must be finite, got {self.amplitude}")
        if self.support[0] < 0 or self.support[1] <= self.support[0]:
            raise InvalidInputError(
                f"Sources must be supported in t > 0 so that f = d_t f = 0 at t = 0, got support {self.support}"
            )
        if self.nodes is not None:
            self.nodes = tuple(int(n) for n in self.nodes)

    @classmethod
    def pulse(
        cls,
        amplitude: float = 1.0,
        start: float = 0.0,
        duration: float = 0.2,
        power: int = 8,
        nodes: Optional[Sequence[int]] = (0,),
    ) -> BoundarySource:
        """The mollified pulse ``sin(pi (t - start) / duration)^power``."""
        if power < 2:
            raise InvalidInputError(f"power must be at least 2, got {power}")

        def derivative(t):
            t = np.asarray(t, dtype=float)
            phase = (t - start) / duration
            inside = (phase > 0) & (phase < 1)
            arg = np.pi * np.clip(phase, 0, 1)
            return np.where(inside, power * np.sin(arg) ** (power - 1) * np.cos(arg) * np.pi / duration, 0.0)

        return cls(
            waveform=lambda t: bump_window(t, start, duration, power),
            amplitude=amplitude,
            nodes=None if nodes is None else tuple(nodes),
            smoothness=power - 1,
            support=(start, start + duration),
            derivative=derivative,
            name="pulse",
            parameters=dict(start=start, duration=duration, power=power),
        )

    @classmethod
    def windowed(
        cls,
        profile: Callable[[np.ndarray], np.ndarray],
        start: float,
        duration: float,
        amplitude: float = 1.0,
        power: int = 8,
        nodes: Optional[Sequence[int]] = (0,),
    ) -> BoundarySource:
        """A smooth profile multiplied by the bump window."""
        return cls(
            waveform=lambda t: np.asarray(profile(t), dtype=float) * bump_window(t, start, duration, power),
            amplitude=amplitude,
            nodes=None if nodes is None else tuple(nodes),
            smoothness=power - 1,
            support=(start, start + duration),
            name="windowed",
            parameters=dict(start=start, duration=duration, power=power),
        )

    def __call__(self, t: np.ndarray) -> np.ndarray:
        return self.amplitude * np.asarray(self.waveform(t), dtype=float)

    def scaled(self, factor: float) -> BoundarySource:
        return replace(self, amplitude=self.amplitude * factor)

    def sample(self, grid: Grid) -> np.ndarray:
        """Dirichlet values of shape ``(nt + 1, n_boundary)``."""
        n_boundary = int(grid.boundary_mask.sum())
        values = np.zeros((grid.nt + 1, n_boundary))
        nodes = range(n_boundary) if self.nodes is None else self.nodes
        profile = self(grid.times)
        for node in nodes:
            if not 0 <= node < n_boundary:
                raise GridError(f"Boundary node {node} does not exist on a grid with {n_boundary} boundary nodes")
            values[:, node] += profile
        return values

    def as_dict(self) -> dict:
        return dict(
            name=self.name,
            amplitude=self.amplitude,
            nodes=None if self.nodes is None else list(self.nodes),
            smoothness=self.smoothness,
            support=list(self.support),
            parameters=self.parameters,
        )


@dataclass(frozen=True)
class SourceCombination:
    """The weighted sum ``sum_j w_j f_j`` of boundary sources."""

    sources: tuple[BoundarySource, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.sources) != len(self.weights):
            raise InvalidInputError("Need one weight per source.")

    def sample(self, grid: Grid) -> np.ndarray:
        total = np.zeros((grid.nt + 1, int(grid.boundary_mask.sum())))
        for weight, source in zip(self.weights, self.sources):
            if weight != 0.0:
                total += weight * source.sample(grid)
        return total

    @property
    def amplitude(self) -> float:
        return float(sum(abs(w * s.amplitude) for w, s in zip(self.weights, self.sources)))


@dataclass(kw_only=True)
class MediumParams:
    metric: ProductMetric
    b: Optional[FieldFn] = None
    """One-form ``(b_t, b_1, ..., b_d)``; None means zero."""
    h: Optional[FieldFn] = None
    """Potential; None means zero."""
    betas: tuple[Optional[FieldFn], ...] = ()
    """Nonlinear coefficients beta_2, beta_3, ...; missing or None entries are zero."""
    max_order: int = 4
    """Truncation order Mmax of the power series (highest power of p)."""
    name: str = "custom"
    description: dict = field(default_factory=dict)
    """Self-description of the coefficients, used for hashing."""

    def __post_init__(self):
        if not isinstance(self.metric, ProductMetric):
            raise TypeError(f"metric must be a ProductMetric, got {type(self.metric)!r}")
        if self.max_order < 2:
            raise InvalidInputError(f"max_order must be at least 2, got {self.max_order}")
        betas = tuple(self.betas)
        if len(betas) > self.max_order - 1:
            raise InvalidInputError(
                f"Got {len(betas)} betas but max_order={self.max_order} allows {self.max_order - 1}"
            )
        for fn in (self.b, self.h) + betas:
            if fn is not None and not callable(fn):
                raise TypeError(f"Coefficient fields must be callables f(t, x), got {type(fn)!r}")
        self.betas = betas

    @property
    def dim(self) -> int:
        return self.metric.dim

    def beta(self, order: int) -> Optional[FieldFn]:
        """The coefficient beta_order of ``d_t^2(p^order)``, or None."""
        index = order - 2
        if 0 <= index < len(self.betas):
            return self.betas[index]
        return None

    @property
    def orders(self) -> list[int]:
        """Orders k with a nonzero beta_k field."""
        return [k for k in range(2, self.max_order + 1) if self.beta(k) is not None]

    @property
    def is_linear(self) -> bool:
        return not self.orders

    def linear_part(self) -> MediumParams:
        return replace(self, betas=(), name=f"{self.name}-linear")

    def medium_hash(self) -> str:
        return sha256_of(
            dict(name=self.name, description=self.description, metric=self.metric.as_dict(), max_order=self.max_order)
        )

    def as_dict(self) -> dict:
        return dict(
            name=self.name,
            description=self.description,
            metric=self.metric.as_dict(),
            max_order=self.max_order,
            orders=self.orders,
            hash=self.medium_hash(),
        )


# endregion sources and media
# region discrete operators


@dataclass(kw_only=True)
class SampledMedium:
    """Coefficients of a medium sampled on a grid; everything except ``c_boundary`` on interior nodes."""

    grid: Grid
    prefactor: np.ndarray
    """``c^d`` on interior nodes."""
    face_weights: list[np.ndarray]
    """``c^(2-d)`` at cell faces, one array per axis."""
    b_t: np.ndarray
    drift: list[np.ndarray]
    """``c^2 b_k`` per axis, shape ``(nt + 1, *interior)``."""
    h: np.ndarray
    betas: dict[int, np.ndarray]
    max_speed: float


def _face_midpoints(grid: Grid, axis: int) -> np.ndarray:
    nodes = grid.nodes
    lower = [slice(None)] * grid.dim
    upper = [slice(None)] * grid.dim
    lower[axis] = slice(None, -1)
    upper[axis] = slice(1, None)
    return 0.5 * (nodes[tuple(lower)] + nodes[tuple(upper)])


def sample_medium(params: MediumParams, grid: Grid) -> SampledMedium:
    if params.dim != grid.dim:
        raise GridError(f"Medium is {params.dim}-dimensional but the grid has {grid.dim} axes")
    d = grid.dim
    metric = params.metric
    nodes = grid.nodes
    c_nodes = metric.c(nodes)
    t, x = grid.spacetime_mesh()
    interior = (slice(None),) + grid.interior
    one_form = evaluate_one_form(params.b, t, x)[interior]
    c2 = (c_nodes**2)[grid.interior]
    betas = {k: evaluate_scalar(params.beta(k), t, x)[interior] for k in params.orders}
    return SampledMedium(
        grid=grid,
        prefactor=(c_nodes**d)[grid.interior],
        face_weights=[metric.c(_face_midpoints(grid, axis)) ** (2 - d) for axis in range(d)],
        b_t=one_form[..., 0],
        drift=[c2 * one_form[..., k + 1] for k in range(d)],
        h=evaluate_scalar(params.h, t, x)[interior],
        betas=betas,
        max_speed=float(np.max(c_nodes)),
    )


def _divergence_form(
    u: np.ndarray, prefactor: np.ndarray, face_weights: Sequence[np.ndarray], spacing: Sequence[float]
) -> np.ndarray:
    """``prefactor * sum_k D_k^- (w_k D_k^+ u)`` on interior nodes; the last ``len(spacing)`` axes are spatial."""
    d = len(spacing)
    lead = u.ndim - d
    out = 0.0
    for k in range(d):
        axis = lead + k
        flux = face_weights[k] * np.diff(u, axis=axis)
        divergence = np.diff(flux, axis=axis)
        index = [slice(None)] * u.ndim
        for m in range(d):
            if m != k:
                index[lead + m] = slice(1, -1)
        out = out + divergence[tuple(index)] / spacing[k] ** 2
    return prefactor * out


def _central_gradient(u: np.ndarray, spacing: Sequence[float]) -> list[np.ndarray]:
    d = len(spacing)
    lead = u.ndim - d
    gradient = []
    for k in range(d):
        upper = [slice(None)] * lead + [slice(1, -1)] * d
        lower = list(upper)
        upper[lead + k] = slice(2, None)
        lower[lead + k] = slice(None, -2)
        gradient.append((u[tuple(upper)] - u[tuple(lower)]) / (2 * spacing[k]))
    return gradient


def second_time_difference(q: np.ndarray, dt: float) -> np.ndarray:
    """``(q^(n+1) - 2 q^n + q^(n-1)) / dt^2`` with ``q^(-1) = 0``; the last level is left at zero."""
    out = np.zeros_like(q)
    out[0] = (q[1] - 2 * q[0]) / dt**2
    out[1:-1] = (q[2:] - 2 * q[1:-1] + q[:-2]) / dt**2
    return out


def first_time_difference(q: np.ndarray, dt: float) -> np.ndarray:
    """``(q^(n+1) - q^(n-1)) / (2 dt)`` with ``q^(-1) = 0``; the last level is left at zero."""
    out = np.zeros_like(q)
    out[0] = q[1] / (2 * dt)
    out[1:-1] = (q[2:] - q[:-2]) / (2 * dt)
    return out


def nonlinear_term(sm: SampledMedium, p: np.ndarray) -> np.ndarray:
    """``sum_k beta_k D_tt(p^k)`` on interior nodes, differencing the powers."""
    interior = (slice(None),) + sm.grid.interior
    total = np.zeros(p[interior].shape)
    for k, beta in sm.betas.items():
        total += beta * second_time_difference(p[interior] ** k, sm.grid.dt)
    return total


def nonlinear_slope(sm: SampledMedium, p: np.ndarray) -> np.ndarray:
    """``F1 p = sum_k k beta_k p^(k-1)``, the coefficient moved next to ``d_t^2 p`` by the Picard rearrangement."""
    interior = (slice(None),) + sm.grid.interior
    total = np.zeros(p[interior].shape)
    for k, beta in sm.betas.items():
        total += k * beta * p[interior] ** (k - 1)
    return total


def _sample_forcing(forcing, grid: Grid) -> Optional[np.ndarray]:
    if forcing is None:
        return None
    if callable(forcing):
        t, x = grid.spacetime_mesh()
        return evaluate_scalar(forcing, t, x)
    forcing = np.asarray(forcing, dtype=float)
    if forcing.shape != grid.field_shape:
        raise GridError(f"Forcing has shape {forcing.shape}, expected {grid.field_shape}")
    return forcing


def apply_box_g(metric: ProductMetric, u: np.ndarray | FieldFn, grid: Grid) -> np.ndarray:
    """Centered second-order discretization of ``box_g u = d_t^2 u - Delta_g u`` on interior space-time nodes.

    Args:
        metric: Supplies c.
        u: Values of shape ``grid.field_shape`` or a callable ``u(t, x)`` sampled on the grid.
        grid: The grid.

    Returns:
        Array of shape ``(nt - 1, *interior)`` for time levels ``1 .. nt - 1``.

    Raises:
        GridError: If u lacks the neighbouring layers the stencil needs.
    """
    if callable(u):
        t, x = grid.spacetime_mesh()
        u = evaluate_scalar(u, t, x)
    u = np.asarray(u, dtype=float)
    if u.shape != grid.field_shape:
        raise GridError(f"u has shape {u.shape}, expected {grid.field_shape}")
    if any(n < 3 for n in u.shape):
        raise GridError("The centered stencil needs at least one ghost layer on each side in every direction.")
    d = grid.dim
    c_nodes = metric.c(grid.nodes)
    faces = [metric.c(_face_midpoints(grid, axis)) ** (2 - d) for axis in range(d)]
    d_tt = (u[2:] - 2 * u[1:-1] + u[:-2])[(slice(None),) + grid.interior] / grid.dt**2
    laplace = _divergence_form(u[1:-1], (c_nodes**d)[grid.interior], faces, grid.dx)
    return d_tt - laplace


def _spatial_rhs(sm: SampledMedium, level: int, u: np.ndarray) -> np.ndarray:
    """``Delta_g u + c^2 b . grad u - h u`` on interior nodes for one time level."""
    rhs = _divergence_form(u, sm.prefactor, sm.face_weights, sm.grid.dx)
    for drift, derivative in zip(sm.drift, _central_gradient(u, sm.grid.dx)):
        rhs = rhs + drift[level] * derivative
    return rhs - sm.h[level] * u[sm.grid.interior]


def _check_cfl(sm: SampledMedium, kappa_min: float = 1.0):
    grid = sm.grid
    limit = min(grid.dx) * math.sqrt(kappa_min) / (sm.max_speed * math.sqrt(grid.dim))
    if grid.dt > limit * (1 + 1e-12):
        raise CFLViolationError(
            f"Time step {grid.dt:.6g} violates the CFL limit {limit:.6g}; use dt <= {0.9 * limit:.6g}",
            suggested_dt=0.9 * limit,
        )


def march(
    sm: SampledMedium,
    forcing: Optional[np.ndarray] = None,
    boundary: Optional[np.ndarray] = None,
    kappa: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Leapfrog solve of ``kappa D_tt p + b_t D_t p - Delta_g p - c^2 b . grad p + h p = G`` with Dirichlet data.

    Args:
        sm: Sampled linear coefficients.
        forcing: Interior forcing G, shape ``grid.field_shape`` (only interior entries are used).
        boundary: Dirichlet values, shape ``(nt + 1, n_boundary)``.
        kappa: Coefficient of ``D_tt`` on interior nodes, shape ``(nt + 1, *interior)``; defaults to 1.

    Returns:
        The field, shape ``grid.field_shape``, with ``p^(-1) = p^0 = 0`` in the interior.
    """
    grid = sm.grid
    kappa_min = 1.0 if kappa is None else float(np.min(kappa))
    if kappa_min <= 0:
        raise SmallDataViolationError("Nonpositive coefficient of d_t^2 p; the data are too large.")
    _check_cfl(sm, kappa_min)
    dt = grid.dt
    interior = grid.interior
    p = np.zeros(grid.field_shape)
    if boundary is not None:
        p[:, grid.boundary_mask] = boundary
    previous = np.zeros(grid.shape)
    for n in range(grid.nt):
        current = p[n]
        rhs = _spatial_rhs(sm, n, current)
        if forcing is not None:
            rhs = rhs + forcing[n][interior]
        k = 1.0 if kappa is None else kappa[n]
        damping = sm.b_t[n] / (2 * dt)
        numerator = rhs + k * (2 * current[interior] - previous[interior]) / dt**2 + damping * previous[interior]
        p[n + 1][interior] = numerator / (k / dt**2 + damping)
        previous = current
    return p


def discrete_residual(
    params: MediumParams,
    field: Wavefield | np.ndarray,
    grid: Optional[Grid] = None,
    forcing=None,
    sampled: Optional[SampledMedium] = None,
) -> np.ndarray:
    """Residual ``L_h p - N_h(p) - G`` of the full discrete equation on interior nodes, levels ``0 .. nt - 1``."""
    if isinstance(field, Wavefield):
        grid = field.grid
        values = field.values
    else:
        values = np.asarray(field, dtype=float)
        if grid is None:
            raise InvalidInputError("A grid is needed for raw arrays.")
    sm = sample_medium(params, grid) if sampled is None else sampled
    interior = (slice(None),) + grid.interior
    d_tt = second_time_difference(values[interior], grid.dt)
    d_t = first_time_difference(values[interior], grid.dt)
    spatial = np.stack([_spatial_rhs(sm, n, values[n]) for n in range(grid.nt + 1)])
    residual = d_tt + sm.b_t * d_t - spatial - nonlinear_term(sm, values)
    g = _sample_forcing(forcing, grid)
    if g is not None:
        residual = residual - g[interior]
    return residual[:-1]


# endregion discrete operators
# region results


class _GridValues:
    """Arithmetic for value arrays living on a common grid."""

    grid: Grid
    values: np.ndarray

    def _check(self, other):
        if type(other) is not type(self):
            raise TypeError(f"Cannot combine {type(self).__name__} with {type(other).__name__}")
        if other.grid != self.grid or other.values.shape != self.values.shape:
            raise GridError("Values live on different grids.")

    def _with_values(self, values):
        return replace(self, values=values)

    def __add__(self, other):
        self._check(other)
        return self._with_values(self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return self._with_values(self.values - other.values)

    def __mul__(self, factor: float):
        return self._with_values(self.values * float(factor))

    __rmul__ = __mul__

    def __truediv__(self, factor: float):
        return self._with_values(self.values / float(factor))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(kw_only=True)
class Wavefield(_GridValues):
    grid: Grid
    values: np.ndarray
    """Field values, shape ``(nt + 1, *grid.shape)``."""
    iterations: int = 1
    residual_history: list[float] = field(default_factory=list)
    """Sup-norm differences of successive Picard iterates."""
    contraction_ratios: list[float] = field(default_factory=list)
    residual: Optional[float] = None
    """Max-norm discrete residual of the equation the field was computed for."""
    reference_residual: Optional[float] = None
    """Residual of the equation the field was derived from, for transformed fields."""
    medium_hash: Optional[str] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.field_shape:
            raise GridError(f"Values have shape {self.values.shape}, grid expects {self.grid.field_shape}")
        if not np.all(np.isfinite(self.values)):
            raise DivergenceError("The field contains non-finite values.")

    @classmethod
    def zeros(cls, grid: Grid) -> Wavefield:
        return cls(grid=grid, values=np.zeros(grid.field_shape))

    def l2_norm(self) -> float:
        cell = self.grid.dt * float(np.prod(self.grid.dx))
        return float(np.sqrt(cell * np.sum(self.values**2)))

    @property
    def residual_ratio(self) -> Optional[float]:
        """``residual / reference_residual``, with reference residuals below :data:`RESIDUAL_FLOOR` raised to it."""
        if self.residual is None or self.reference_residual is None:
            return None
        return self.residual / max(self.reference_residual, RESIDUAL_FLOOR)

    def iter_rows(self, stride: int = 1) -> Iterable[tuple]:
        times = self.grid.times
        nodes = self.grid.nodes
        for n in range(0, self.grid.nt + 1, stride):
            for index in np.ndindex(*self.grid.shape):
                if any(i % stride for i in index):
                    continue
                yield (times[n],) + tuple(nodes[index]) + (self.values[(n,) + index],)

    def to_csv(self, filepath: Path | str, stride: int = 1) -> int:
        """Writes columns ``t, x[, y], p``."""
        header = ["t", "x", "y"][: 1 + self.grid.dim] + ["p"]
        return store_csv(self.iter_rows(stride), header, filepath)

    def to_binary(self, filepath: Path | str) -> tuple[Path, Path]:
        """Row-major little-endian float64 dump plus a JSON header with dims, spacing and medium hash."""
        filepath = Path(filepath)
        data_path = filepath.with_suffix(".bin")
        header_path = filepath.with_suffix(".json")
        data_path.parent.mkdir(parents=True, exist_ok=True)
        self.values.astype("<f8").tofile(data_path)
        store_json(
            dict(
                dims=list(self.values.shape),
                spacing=[self.grid.dt] + list(self.grid.dx),
                origin=[0.0] + list(self.grid.origin),
                dtype="<f8",
                order="C",
                medium_hash=self.medium_hash,
            ),
            header_path,
        )
        return data_path, header_path

    def as_dict(self) -> dict:
        return dict(
            grid=self.grid.as_dict(),
            iterations=self.iterations,
            residual_history=self.residual_history,
            contraction_ratios=self.contraction_ratios,
            residual=self.residual,
            reference_residual=self.reference_residual,
            max_abs=self.max_abs(),
            medium_hash=self.medium_hash,
        )


@dataclass(kw_only=True)
class DNTrace(_GridValues):
    grid: Grid
    values: np.ndarray
    """``d_nu p + b(nu) p / 2`` at the boundary nodes, shape ``(nt + 1, n_boundary)``."""

    def l2_norm(self) -> float:
        """Discrete L2 norm over (0, T) x boundary with counting measure on the boundary nodes."""
        return float(np.sqrt(self.grid.dt * np.sum(self.values**2)))

    def iter_rows(self) -> Iterable[tuple]:
        times = self.grid.times
        for n in range(self.grid.nt + 1):
            for index in range(self.values.shape[1]):
                yield times[n], index, self.values[n, index]

    def to_csv(self, filepath: Path | str) -> int:
        return store_csv(self.iter_rows(), ["t", "boundary_index", "value"], filepath)


def _extrapolate_to_end(values: np.ndarray, end: int) -> np.ndarray:
    """Linear extrapolation along the last axis from the two interior nodes next to ``end``."""
    if values.shape[-1] < 2:
        return values[..., end]
    step = 1 if end == 0 else -1
    return 2 * values[..., end] - values[..., end + step]


def dn_trace(params: MediumParams, field: Wavefield, sampled: Optional[SampledMedium] = None) -> DNTrace:
    """Neumann data ``d_nu p + b(nu) p / 2`` at both ends of a 1+1-D grid.

    The normal derivative is the flux through the boundary face of the divergence form, moved to the boundary node
    with half a cell of the divergence extrapolated from the interior; this is second order and commutes with the
    face weights of a gauged sampling.

    Args:
        params: Supplies c and b.
        field: The field.
        sampled: Face weights of the divergence form; by default those of ``params``.
    """
    grid = field.grid
    if grid.dim != 1:
        raise UnsupportedConfigurationError("DN traces are computed on 1+1-dimensional grids only.")
    (dx,) = grid.dx
    p = field.values
    if sampled is None:
        weights = params.metric.c(_face_midpoints(grid, 0)) ** (2 - grid.dim)
    else:
        weights = sampled.face_weights[0]
    weights = np.broadcast_to(weights, (grid.cells[0],))
    divergence = _divergence_form(p, 1.0, [weights], grid.dx)
    x_ends = np.array([[grid.axes[0][0]], [grid.axes[0][-1]]])
    normals = np.array([-1.0, 1.0])
    c_ends = params.metric.c(x_ends)
    t = grid.times[:, None]
    b_x = evaluate_one_form(params.b, t, x_ends[None, :, :])[..., 1]
    values = np.empty((grid.nt + 1, 2))
    for side, (end, inner) in enumerate(((0, 1), (-1, -2))):
        flux = weights[end] * (p[:, end] - p[:, inner]) / dx
        normal_derivative = flux + 0.5 * dx * _extrapolate_to_end(divergence, end)
        values[:, side] = normal_derivative + 0.5 * b_x[:, side] * c_ends[side] * normals[side] * p[:, end]
    return DNTrace(grid=grid, values=values)


# endregion results
# region solvers


def solve_linear(
    params: MediumParams,
    source: Optional[BoundarySource | SourceCombination] = None,
    grid: Optional[Grid] = None,
    forcing=None,
    sampled: Optional[SampledMedium] = None,
) -> Wavefield:
    """Solves the linear problem with Dirichlet data from ``source`` and interior ``forcing``.

    With ``source=None`` this is the discrete Q_bvp: zero Dirichlet data and zero initial data.

    Raises:
        InvalidInputError: If the medium has nonlinear coefficients.
        CFLViolationError: If the grid's time step is too large.
    """
    if not params.is_linear:
        raise InvalidInputError("solve_linear needs a medium without nonlinear coefficients; use linear_part().")
    if grid is None:
        raise InvalidInputError("A grid is required.")
    sm = sample_medium(params, grid) if sampled is None else sampled
    boundary = None if source is None else source.sample(grid)
    values = march(sm, _sample_forcing(forcing, grid), boundary)
    return Wavefield(grid=grid, values=values, medium_hash=params.medium_hash())


def solve_nonlinear(
    params: MediumParams,
    source: Optional[BoundarySource | SourceCombination],
    grid: Grid,
    forcing=None,
    rtol: float = 1e-12,
    max_iter: int = 50,
    f1_limit: float = F1_LIMIT,
    sampled: Optional[SampledMedium] = None,
) -> Wavefield:
    """Global Picard iteration for the nonlinear problem.

    Each iteration solves ``(1 - F1 p_k) D_tt p + L' p = G + N_h(p_k) - F1 p_k D_tt p_k`` where ``L'`` is the
    linear operator without ``D_tt``, ``N_h`` the differenced power series and ``F1 p = sum_k k beta_k p^(k-1)``.
    Its fixed point solves the discrete equation exactly. Iteration stops once successive iterates differ by at
    most ``rtol`` times the sup norm of the iterate.

    Args:
        params: The medium.
        source: Dirichlet data, or None for homogeneous boundary values.
        grid: The grid.
        forcing: Optional interior forcing (array of ``grid.field_shape`` or callable ``G(t, x)``).
        rtol: Relative stopping tolerance.
        max_iter: Maximum number of linear solves.
        f1_limit: Refuse data with ``max |F1 p| > f1_limit``.

    Returns:
        The field with iteration count, difference history and contraction ratios.

    Raises:
        SmallDataViolationError: If ``|F1 p|`` exceeds ``f1_limit``.
        DivergenceError: On non-convergence or non-finite iterates, reporting the last contraction ratio.
    """
    if params.dim != 1 and not params.is_linear:
        raise UnsupportedConfigurationError("Nonlinear solves are implemented in 1+1 dimensions only.")
    sm = sample_medium(params, grid) if sampled is None else sampled
    boundary = None if source is None else source.sample(grid)
    g = _sample_forcing(forcing, grid)
    interior = (slice(None),) + grid.interior
    if params.is_linear:
        values = march(sm, g, boundary)
        return Wavefield(grid=grid, values=values, medium_hash=params.medium_hash())

    p = np.zeros(grid.field_shape)
    history: list[float] = []
    ratios: list[float] = []
    for iteration in range(1, max_iter + 1):
        slope = nonlinear_slope(sm, p)
        largest = float(np.max(np.abs(slope)))
        if largest > f1_limit:
            raise SmallDataViolationError(
                f"|F1 p| reached {largest:.3g} > {f1_limit} after {iteration - 1} iterations; the data are too large.",
                last_ratio=ratios[-1] if ratios else None,
                iterations=iteration - 1,
            )
        rhs = np.zeros(grid.field_shape) if g is None else g.copy()
        rhs[interior] += nonlinear_term(sm, p) - slope * second_time_difference(p[interior], grid.dt)
        new = march(sm, rhs, boundary, kappa=1.0 - slope)
        difference = float(np.max(np.abs(new - p)))
        scale = float(np.max(np.abs(new)))
        if not math.isfinite(difference) or not math.isfinite(scale):
            raise DivergenceError(
                f"Picard iterate {iteration} is not finite.",
                last_ratio=ratios[-1] if ratios else None,
                iterations=iteration,
            )
        if history and history[-1] > 0:
            ratios.append(difference / history[-1])
        history.append(difference)
        p = new
        module_logger.debug(f"Picard iteration {iteration}: difference {difference:.3e}, sup norm {scale:.3e}")
        if difference <= rtol * scale:
            break
        if len(ratios) >= 3 and all(r >= 1.0 for r in ratios[-3:]):
            raise DivergenceError(
                f"Picard iteration diverges (ratios {ratios[-3:]}); the data exceed the small-data threshold.",
                last_ratio=ratios[-1],
                iterations=iteration,
            )
    else:
        raise DivergenceError(
            f"Picard iteration did not converge within {max_iter} iterations "
            f"(last contraction ratio {ratios[-1] if ratios else float('nan'):.3g}).",
            last_ratio=ratios[-1] if ratios else None,
            iterations=max_iter,
        )
    residual = float(np.max(np.abs(discrete_residual(params, p, grid, forcing=g, sampled=sm))))
    module_logger.info(
        f"Nonlinear solve converged in {iteration} iterations, sup norm {float(np.max(np.abs(p))):.3e}, "
        f"residual {residual:.3e}"
    )
    return Wavefield(
        grid=grid,
        values=p,
        iterations=iteration,
        residual_history=history,
        contraction_ratios=ratios,
        residual=residual,
        medium_hash=params.medium_hash(),
    )


# endregion solvers
# region studies


@dataclass(kw_only=True)
class ConvergenceStudy:
    spacings: list[float]
    errors: list[float]
    rates: list[Optional[float]]
    """Pairwise rates ``log(e_(k-1) / e_k) / log(h_(k-1) / h_k)``; the first entry is None."""
    order: float
    """Least-squares slope of log error against log spacing."""
    reliable: bool

    def as_dict(self) -> dict:
        return dict(
            spacings=self.spacings, errors=self.errors, rates=self.rates, order=self.order, reliable=self.reliable
        )


def compute_rates(spacings: Sequence[float], errors: Sequence[float]) -> list[Optional[float]]:
    """Convergence rates: ``rate_k = log(e_(k-1) / e_k) / log(h_(k-1) / h_k)``."""
    rates: list[Optional[float]] = [None]
    for k in range(1, len(spacings)):
        if errors[k] > 0 and errors[k - 1] > 0:
            rates.append(math.log(errors[k - 1] / errors[k]) / math.log(spacings[k - 1] / spacings[k]))
        else:
            rates.append(None)
    return rates


def _as_samples(result) -> tuple[Grid, np.ndarray]:
    if isinstance(result, (Wavefield, DNTrace)):
        return result.grid, result.values
    grid, values = result
    return grid, np.asarray(values, dtype=float)


def _restrict(values: np.ndarray, fine: Grid, coarse: Grid, spatial: bool) -> np.ndarray:
    if fine.nt % coarse.nt:
        raise GridError(f"Time levels are not nested: {coarse.nt} does not divide {fine.nt}")
    index = [slice(None, None, fine.nt // coarse.nt)]
    if spatial:
        for n_fine, n_coarse in zip(fine.cells, coarse.cells):
            if n_fine % n_coarse:
                raise GridError(f"Spatial grids are not nested: {n_coarse} does not divide {n_fine}")
            index.append(slice(None, None, n_fine // n_coarse))
    return values[tuple(index)]


def convergence_order(
    scenario: Callable[[Grid], Wavefield | DNTrace | tuple[Grid, np.ndarray]],
    grids: Sequence[Grid],
    exact: Optional[Callable[[Grid], np.ndarray]] = None,
) -> ConvergenceStudy:
    """Observed order of a scenario under grid refinement.

    Errors are sup-norm differences against ``exact(grid)`` when given, else against the finest grid restricted to
    the coarser nodes. Grids are sorted from coarse to fine.

    Raises:
        InvalidInputError: With fewer than three grids.
    """
    if len(grids) < 3:
        raise InvalidInputError(f"A convergence study needs at least 3 grids, got {len(grids)}")
    grids = sorted(grids, key=lambda g: -max(g.dx))
    results = [_as_samples(scenario(grid)) for grid in grids]
    if exact is not None:
        spacings = [max(grid.dx) for grid in grids]
        errors = [float(np.max(np.abs(values - exact(grid)))) for grid, values in results]
    else:
        fine_grid, fine_values = results[-1]
        spacings = [max(grid.dx) for grid in grids[:-1]]
        errors = []
        for grid, values in results[:-1]:
            spatial = values.ndim == fine_values.ndim and values.shape[1:] != fine_values.shape[1:]
            errors.append(float(np.max(np.abs(values - _restrict(fine_values, fine_grid, grid, spatial)))))
    rates = compute_rates(spacings, errors)
    positive = [(h, e) for h, e in zip(spacings, errors) if e > 0]
    if len(positive) >= 2:
        log_h, log_e = np.log([h for h, _ in positive]), np.log([e for _, e in positive])
        order = float(np.polyfit(log_h, log_e, 1)[0])
    else:
        order = float("nan")
    reliable = all(e1 > e2 for e1, e2 in zip(errors, errors[1:])) and len(positive) == len(errors)
    if not reliable:
        warnings.warn(f"Errors {errors} do not decrease monotonically; the observed order is unreliable.")
    module_logger.info(f"Observed order {order:.3f} from errors {errors}")
    return ConvergenceStudy(spacings=spacings, errors=errors, rates=rates, order=order, reliable=reliable)


@dataclass(kw_only=True)
class SmallDataProbe:
    amplitudes: list[float]
    converged: list[bool]
    iterations: list[int]
    max_ratios: list[Optional[float]]
    gains: list[Optional[float]]
    """``sup |p| / amplitude`` per converged amplitude."""
    threshold: Optional[float]
    """Largest amplitude that converged before the first failure."""
    failure: Optional[str] = None

    def as_dict(self) -> dict:
        return dict(
            amplitudes=self.amplitudes,
            converged=self.converged,
            iterations=self.iterations,
            max_ratios=self.max_ratios,
            gains=self.gains,
            threshold=self.threshold,
            failure=self.failure,
        )


def probe_small_data_threshold(
    params: MediumParams,
    source: BoundarySource,
    grid: Grid,
    amplitudes: Sequence[float],
    **solver_kwargs,
) -> SmallDataProbe:
    """Sweeps the source amplitude upward until the Picard solve fails and reports the empirical threshold."""
    sm = sample_medium(params, grid)
    probe = SmallDataProbe(
        amplitudes=[], converged=[], iterations=[], max_ratios=[], gains=[], threshold=None
    )
    for amplitude in sorted(amplitudes):
        probe.amplitudes.append(float(amplitude))
        try:
            field = solve_nonlinear(params, replace(source, amplitude=amplitude), grid, sampled=sm, **solver_kwargs)
        except DivergenceError as e:
            probe.converged.append(False)
            probe.iterations.append(e.iterations or 0)
            probe.max_ratios.append(e.last_ratio)
            probe.gains.append(None)
            probe.failure = str(e)
            module_logger.info(f"Picard iteration fails at amplitude {amplitude:.3g}: {e}")
            break
        probe.converged.append(True)
        probe.iterations.append(field.iterations)
        probe.max_ratios.append(max(field.contraction_ratios) if field.contraction_ratios else None)
        probe.gains.append(field.max_abs() / amplitude if amplitude else None)
        probe.threshold = float(amplitude)
    return probe


# endregion studies

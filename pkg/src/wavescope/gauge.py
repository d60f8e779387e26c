"""Gauge transformations

    (b, h, beta_k) -> (b + 2 drho / rho, h + <b, drho / rho> + box_g(rho) / rho, rho^(k-1) beta_k)

for nonvanishing ``rho`` equal to 1 on the boundary, and the numerical check that they leave the DN map unchanged.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from wavescope.base import (
    FieldFn,
    GaugeError,
    broadcast_shape,
    evaluate_one_form,
    evaluate_scalar,
)
from wavescope.lorentz_geometry import ProductMetric
from wavescope.wave_solver import (
    BoundarySource,
    Grid,
    MediumParams,
    SampledMedium,
    Wavefield,
    apply_box_g,
    compute_rates,
    discrete_residual,
    dn_trace,
    sample_medium,
    second_time_difference,
    solve_nonlinear,
)

module_logger = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-12
RESIDUAL_RATIO_LIMIT = 10.0
"""Largest accepted ratio of the gauged to the original relative residual."""
FD_STEP = 1e-4


def _fd_gradient(fn: FieldFn, t: np.ndarray, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    components = []
    for k in range(x.shape[-1]):
        shift = np.zeros(x.shape[-1])
        shift[k] = step
        components.append((fn(t, x + shift) - fn(t, x - shift)) / (2 * step))
    return np.stack(np.broadcast_arrays(*components), axis=-1)


def _fd_laplacian(fn: FieldFn, t: np.ndarray, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    center = fn(t, x)
    total = 0.0
    for k in range(x.shape[-1]):
        shift = np.zeros(x.shape[-1])
        shift[k] = step
        total = total + (fn(t, x + shift) - 2 * center + fn(t, x - shift)) / step**2
    return total


def pairing(metric: ProductMetric, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``<a, b> = a_t b_t - c^2 sum_k a_k b_k`` for one-form component arrays with a trailing axis of length d + 1."""
    c2 = metric.c(x) ** 2
    return a[..., 0] * b[..., 0] - c2 * np.sum(a[..., 1:] * b[..., 1:], axis=-1)


class _SineProduct:
    """``prod_k sin(pi (x_k - lo_k) / L_k)``, which vanishes on the boundary of the box."""

    def __init__(self, bounds: Sequence[tuple[float, float]]):
        self.bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        self.lower = np.array([lo for lo, _ in self.bounds])
        self.wavenumbers = np.array([math.pi / (hi - lo) for lo, hi in self.bounds])
        self.k2 = float(np.sum(self.wavenumbers**2))

    def __call__(self, x) -> np.ndarray:
        return np.prod(np.sin(self.wavenumbers * (np.asarray(x, dtype=float) - self.lower)), axis=-1)

    def gradient(self, x) -> np.ndarray:
        phase = self.wavenumbers * (np.asarray(x, dtype=float) - self.lower)
        sines = np.sin(phase)
        components = []
        for k in range(len(self.bounds)):
            others = np.prod(np.delete(sines, k, axis=-1), axis=-1)
            components.append(self.wavenumbers[k] * np.cos(phase[..., k]) * others)
        return np.stack(components, axis=-1)

    def as_list(self) -> list[list[float]]:
        return [list(b) for b in self.bounds]


# region GaugeFunction


@dataclass(kw_only=True)
class GaugeFunction:
    """A nonvanishing scalar ``rho(t, x)`` together with the derivatives the transformation needs.

    Missing spatial derivatives are replaced by central differences; missing time derivatives mean that rho does
    not depend on t.
    """

    value: FieldFn
    time_derivative: Optional[FieldFn] = None
    second_time_derivative: Optional[FieldFn] = None
    gradient: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    """Spatial gradient, shape ``(..., d)``."""
    laplacian: Optional[FieldFn] = None
    """Flat spatial Laplacian ``sum_k d_k^2 rho``."""
    name: str = "custom"
    parameters: dict = field(default_factory=dict)
    is_identity: bool = False

    def __post_init__(self):
        if not callable(self.value):
            raise TypeError(f"value must be callable, got {type(self.value)!r}")

    @property
    def time_dependent(self) -> bool:
        return self.time_derivative is not None

    def __call__(self, t, x) -> np.ndarray:
        return evaluate_scalar(self.value, t, x)

    def dt(self, t, x) -> np.ndarray:
        return evaluate_scalar(self.time_derivative, t, x)

    def dtt(self, t, x) -> np.ndarray:
        return evaluate_scalar(self.second_time_derivative, t, x)

    def grad(self, t, x) -> np.ndarray:
        if self.gradient is not None:
            return np.broadcast_to(self.gradient(t, x), broadcast_shape(t, x) + (np.shape(x)[-1],)).astype(float)
        return _fd_gradient(self.value, t, x)

    def flat_laplacian(self, t, x) -> np.ndarray:
        if self.laplacian is not None:
            return evaluate_scalar(self.laplacian, t, x)
        return np.broadcast_to(_fd_laplacian(self.value, t, x), broadcast_shape(t, x)).astype(float)

    def differential(self, t, x) -> np.ndarray:
        """``drho = (d_t rho, d_1 rho, ..., d_d rho)``."""
        return np.concatenate([self.dt(t, x)[..., None], self.grad(t, x)], axis=-1)

    def log_differential(self, t, x) -> np.ndarray:
        """``drho / rho``."""
        return self.differential(t, x) / self(t, x)[..., None]

    def box_g(self, metric: ProductMetric, t, x) -> np.ndarray:
        """``d_t^2 rho - c^2 Delta rho - (2 - d) c grad c . grad rho``."""
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        c = metric.c(x)
        laplace_g = c**2 * self.flat_laplacian(t, x)
        if d != 2:
            laplace_g = laplace_g + (2 - d) * c * np.sum(metric.grad_c(x) * self.grad(t, x), axis=-1)
        return self.dtt(t, x) - laplace_g

    def inverse(self) -> GaugeFunction:
        """The gauge ``1 / rho`` with chain-rule derivatives."""
        if self.is_identity:
            return self
        rho = self

        def value(t, x):
            return 1.0 / rho(t, x)

        def gradient(t, x):
            return -rho.grad(t, x) / rho(t, x)[..., None] ** 2

        def laplacian(t, x):
            r = rho(t, x)
            g = rho.grad(t, x)
            return -rho.flat_laplacian(t, x) / r**2 + 2 * np.sum(g * g, axis=-1) / r**3

        time_derivative = second = None
        if rho.time_dependent:

            def time_derivative(t, x):
                return -rho.dt(t, x) / rho(t, x) ** 2

            def second(t, x):
                r = rho(t, x)
                return -rho.dtt(t, x) / r**2 + 2 * rho.dt(t, x) ** 2 / r**3

        return GaugeFunction(
            value=value,
            time_derivative=time_derivative,
            second_time_derivative=second,
            gradient=gradient,
            laplacian=laplacian,
            name=f"inverse({self.name})",
            parameters=dict(inverse=self.as_dict()),
        )

    def __mul__(self, other: GaugeFunction) -> GaugeFunction:
        if not isinstance(other, GaugeFunction):
            return NotImplemented
        if other.is_identity:
            return self
        if self.is_identity:
            return other
        r1, r2 = self, other

        def value(t, x):
            return r1(t, x) * r2(t, x)

        def gradient(t, x):
            return r1.grad(t, x) * r2(t, x)[..., None] + r1(t, x)[..., None] * r2.grad(t, x)

        def laplacian(t, x):
            return (
                r1.flat_laplacian(t, x) * r2(t, x)
                + 2 * np.sum(r1.grad(t, x) * r2.grad(t, x), axis=-1)
                + r1(t, x) * r2.flat_laplacian(t, x)
            )

        time_derivative = second = None
        if r1.time_dependent or r2.time_dependent:

            def time_derivative(t, x):
                return r1.dt(t, x) * r2(t, x) + r1(t, x) * r2.dt(t, x)

            def second(t, x):
                return r1.dtt(t, x) * r2(t, x) + 2 * r1.dt(t, x) * r2.dt(t, x) + r1(t, x) * r2.dtt(t, x)

        return GaugeFunction(
            value=value,
            time_derivative=time_derivative,
            second_time_derivative=second,
            gradient=gradient,
            laplacian=laplacian,
            name=f"{self.name}*{other.name}",
            parameters=dict(factors=[self.as_dict(), other.as_dict()]),
        )

    def certify(
        self,
        bounds: Sequence[tuple[float, float]],
        times: Sequence[float] = (0.0,),
        samples: int = 21,
        tol: float = BOUNDARY_TOL,
    ) -> float:
        """Checks that rho is nonvanishing on a box and equal to 1 on its boundary.

        Returns:
            The smallest ``|rho|`` found.

        Raises:
            GaugeError: If rho vanishes or differs from 1 on the boundary by more than ``tol``.
        """
        axes = [np.linspace(lo, hi, samples) for lo, hi in bounds]
        nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        on_boundary = np.zeros(nodes.shape[:-1], dtype=bool)
        for axis in range(len(bounds)):
            index = [slice(None)] * len(bounds)
            for end in (0, -1):
                index[axis] = end
                on_boundary[tuple(index)] = True
        smallest = math.inf
        for t in times:
            values = self(np.full(nodes.shape[:-1], float(t)), nodes)
            if not np.all(np.isfinite(values)):
                raise GaugeError(f"Gauge {self.name!r} is not finite at t={t}")
            smallest = min(smallest, float(np.min(np.abs(values))))
            boundary_defect = float(np.max(np.abs(values[on_boundary] - 1.0)))
            if boundary_defect > tol:
                raise GaugeError(
                    f"Gauge {self.name!r} differs from 1 on the boundary by {boundary_defect:.3e} at t={t}"
                )
        if smallest <= 0.0:
            raise GaugeError(f"Gauge {self.name!r} vanishes on the sampled domain")
        return smallest

    def as_dict(self) -> dict:
        return dict(name=self.name, parameters=self.parameters, time_dependent=self.time_dependent)

    # region presets

    @classmethod
    def identity(cls) -> GaugeFunction:
        one = lambda t, x: np.ones(broadcast_shape(t, x))
        return cls(
            value=one,
            gradient=lambda t, x: np.zeros(broadcast_shape(t, x) + (np.shape(x)[-1],)),
            laplacian=lambda t, x: np.zeros(broadcast_shape(t, x)),
            name="identity",
            is_identity=True,
        )

    @classmethod
    def sinusoidal(
        cls,
        amplitude: float = 0.1,
        dim: int = 1,
        bounds: Optional[Sequence[tuple[float, float]]] = None,
    ) -> GaugeFunction:
        """``rho = 1 + amplitude * prod_k sin(pi (x_k - lo_k) / L_k)`` on a box; equal to 1 on the box boundary."""
        if abs(amplitude) >= 1:
            raise GaugeError(f"Amplitude {amplitude} lets the sinusoidal gauge vanish")
        bump = _SineProduct(((0.0, 1.0),) * dim if bounds is None else bounds)
        return cls(
            value=lambda t, x: 1.0 + amplitude * bump(x),
            gradient=lambda t, x: amplitude * bump.gradient(x),
            laplacian=lambda t, x: -amplitude * bump.k2 * bump(x),
            name="sinusoidal",
            parameters=dict(amplitude=amplitude, bounds=bump.as_list()),
        )

    @classmethod
    def time_bump(
        cls,
        amplitude: float = 0.05,
        duration: float = 1.0,
        dim: int = 1,
        bounds: Optional[Sequence[tuple[float, float]]] = None,
    ) -> GaugeFunction:
        """``rho = 1 + amplitude * t (T - t) * prod_k sin(pi (x_k - lo_k) / L_k)``, time dependent in the interior."""
        bump = _SineProduct(((0.0, 1.0),) * dim if bounds is None else bounds)
        T = float(duration)
        if abs(amplitude) * T**2 / 4 >= 1:
            raise GaugeError(f"Amplitude {amplitude} lets the gauge vanish before t={T}")

        def envelope(t):
            t = np.asarray(t, dtype=float)
            return amplitude * t * (T - t)

        return cls(
            value=lambda t, x: 1.0 + envelope(t) * bump(x),
            time_derivative=lambda t, x: amplitude * (T - 2 * np.asarray(t, dtype=float)) * bump(x),
            second_time_derivative=lambda t, x: -2 * amplitude * bump(x),
            gradient=lambda t, x: envelope(t)[..., None] * bump.gradient(x),
            laplacian=lambda t, x: -envelope(t) * bump.k2 * bump(x),
            name="time-bump",
            parameters=dict(amplitude=amplitude, duration=T, bounds=bump.as_list()),
        )

    # endregion presets


def time_power_derivatives(rho: GaugeFunction, order: int, t, x) -> tuple[np.ndarray, np.ndarray]:
    """Analytic ``d_t(rho^k)`` and ``d_t^2(rho^k)`` for ``k = order``."""
    r = rho(t, x)
    r_t = rho.dt(t, x)
    r_tt = rho.dtt(t, x)
    k = order
    first = k * r ** (k - 1) * r_t
    second = k * (k - 1) * r ** (k - 2) * r_t**2 + k * r ** (k - 1) * r_tt
    return first, second


# endregion GaugeFunction
# region transformation


def apply_gauge(params: MediumParams, rho: GaugeFunction, strict: bool = True) -> MediumParams:
    """Transforms the coefficients of a medium by a gauge.

    Args:
        params: The medium.
        rho: Nonvanishing gauge, equal to 1 on the boundary.
        strict: Refuse time-dependent gauges, for which the DN map is not preserved.

    Returns:
        ``params`` itself for the identity gauge, else the transformed medium.

    Raises:
        GaugeError: In strict mode if rho depends on t.
    """
    if not isinstance(rho, GaugeFunction):
        raise TypeError(f"rho must be a GaugeFunction, got {type(rho)!r}")
    if rho.is_identity:
        return params
    if strict and rho.time_dependent:
        raise GaugeError(f"Gauge {rho.name!r} depends on t; pass strict=False to transform anyway")
    metric = params.metric
    b, h = params.b, params.h

    def b_rho(t, x):
        return evaluate_one_form(b, t, x) + 2.0 * rho.log_differential(t, x)

    def h_rho(t, x):
        w = rho.log_differential(t, x)
        return (
            evaluate_scalar(h, t, x)
            + pairing(metric, x, evaluate_one_form(b, t, x), w)
            + rho.box_g(metric, t, x) / rho(t, x)
        )

    def scaled_beta(beta: Optional[FieldFn], order: int) -> Optional[FieldFn]:
        if beta is None:
            return None

        def beta_rho(t, x):
            return rho(t, x) ** (order - 1) * evaluate_scalar(beta, t, x)

        return beta_rho

    betas = tuple(scaled_beta(beta, k + 2) for k, beta in enumerate(params.betas))
    description = dict(params.description)
    description["gauges"] = description.get("gauges", []) + [rho.as_dict()]
    return MediumParams(
        metric=metric,
        b=b_rho,
        h=h_rho,
        betas=betas,
        max_order=params.max_order,
        name=f"{params.name}^{rho.name}",
        description=description,
    )


def perturb_potential(params: MediumParams, shift: float) -> MediumParams:
    """Adds a constant to the potential; a perturbation that no gauge produces."""
    h = params.h

    def shifted(t, x):
        return evaluate_scalar(h, t, x) + shift

    description = dict(params.description, potential_shift=shift)
    return MediumParams(
        metric=params.metric,
        b=params.b,
        h=shifted,
        betas=params.betas,
        max_order=params.max_order,
        name=f"{params.name}+h{shift:g}",
        description=description,
    )


def discrete_gauge_potential(params: MediumParams, rho: GaugeFunction, grid: Grid) -> np.ndarray:
    """``h^rho`` on interior nodes of every time level, with ``box_g rho`` differenced by the solver's stencil.

    Levels 0 and ``nt`` take the stencil from rho shifted by one time step.
    """
    metric = params.metric
    dt = grid.dt
    box = np.concatenate(
        [
            apply_box_g(metric, lambda t, x: rho(t - dt, x), grid)[:1],
            apply_box_g(metric, rho, grid),
            apply_box_g(metric, lambda t, x: rho(t + dt, x), grid)[-1:],
        ]
    )
    t, x = grid.spacetime_mesh()
    interior = (slice(None),) + grid.interior
    b = evaluate_one_form(params.b, t, x)
    h = evaluate_scalar(params.h, t, x) + pairing(metric, x, b, rho.log_differential(t, x))
    return h[interior] + box / rho(t, x)[interior]


def sample_gauged_medium(
    params: MediumParams, rho: GaugeFunction, grid: Grid, strict: bool = True
) -> SampledMedium:
    """Samples the gauge transform of ``params`` so that the discrete operator commutes with the gauge.

    For a static gauge the divergence form carries rho: prefactor ``c^d / rho^2``, face weights
    ``c^(2-d) rho_i rho_j`` over the two nodes ``i, j`` of a face, and the drift of the original ``b`` alone.
    The discrete operator applied to ``q`` then equals ``1 / rho`` times the original one applied to ``rho q``
    whenever ``b`` has no spatial components. A time-dependent gauge keeps the plain sampling with the
    discrete potential.
    """
    gauged = apply_gauge(params, rho, strict=strict)
    sampled = sample_medium(gauged, grid)
    if gauged is params:
        return sampled
    h = discrete_gauge_potential(params, rho, grid)
    if rho.time_dependent:
        return replace(sampled, h=h)
    r = rho(0.0, grid.nodes)
    face_weights = []
    for axis, weights in enumerate(sampled.face_weights):
        lower = [slice(None)] * grid.dim
        upper = [slice(None)] * grid.dim
        lower[axis] = slice(None, -1)
        upper[axis] = slice(1, None)
        face_weights.append(weights * r[tuple(lower)] * r[tuple(upper)])
    return replace(
        sampled,
        prefactor=sampled.prefactor / r[grid.interior] ** 2,
        face_weights=face_weights,
        drift=sample_medium(params, grid).drift,
        h=h,
    )


def _relative_residual(params: MediumParams, values: np.ndarray, grid: Grid, sampled: SampledMedium) -> float:
    """Max-norm discrete residual scaled by ``max |D_tt p|``."""
    absolute = np.max(np.abs(discrete_residual(params, values, grid, sampled=sampled)))
    interior = (slice(None),) + grid.interior
    scale = np.max(np.abs(second_time_difference(values[interior], grid.dt)))
    return float(absolute / scale) if scale > 0 else float(absolute)


def gauge_solution_transform(
    field: Wavefield,
    rho: GaugeFunction,
    params: Optional[MediumParams] = None,
    strict: bool = True,
) -> Wavefield:
    """``p -> p / rho``.

    With ``params`` given, the returned field carries the relative max-norm residual of the gauged discrete equation
    (scaled by ``max |D_tt p|``) in ``residual`` and that of the original equation on ``p`` in
    ``reference_residual``. A ratio above :data:`RESIDUAL_RATIO_LIMIT` is logged as a warning.
    """
    grid = field.grid
    t, x = grid.spacetime_mesh()
    values = field.values / rho(t, x)
    residual = None
    reference = None
    gauged_hash = None
    if params is not None:
        gauged = apply_gauge(params, rho, strict=strict)
        gauged_hash = gauged.medium_hash()
        residual = _relative_residual(gauged, values, grid, sample_gauged_medium(params, rho, grid, strict=strict))
        reference = _relative_residual(params, field.values, grid, sample_medium(params, grid))
        module_logger.debug(f"Relative residuals: gauged {residual:.3e}, original {reference:.3e}")
    transformed = Wavefield(
        grid=grid,
        values=values,
        iterations=field.iterations,
        residual=residual,
        reference_residual=reference,
        medium_hash=gauged_hash or field.medium_hash,
    )
    ratio = transformed.residual_ratio
    if ratio is not None and ratio > RESIDUAL_RATIO_LIMIT:
        module_logger.warning(
            f"The gauged field leaves a residual {ratio:.3g} times that of the original equation under {rho.name!r}"
        )
    return transformed


# endregion transformation
# region DN discrepancy


@dataclass(kw_only=True)
class GaugeDiscrepancy:
    spacings: list[float]
    discrepancies: list[float]
    """Discrete L2 norms of the DN-trace differences."""
    relative: list[float]
    """Discrepancies divided by the L2 norm of the reference trace."""
    rates: list[Optional[float]]
    order: float
    reliable: bool
    gauge: dict
    perturbation: float = 0.0

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.spacings, self.discrepancies, self.relative))

    def as_dict(self) -> dict:
        return dict(
            spacings=self.spacings,
            discrepancies=self.discrepancies,
            relative=self.relative,
            rates=self.rates,
            order=self.order,
            reliable=self.reliable,
            gauge=self.gauge,
            perturbation=self.perturbation,
        )


def dn_discrepancy(
    params: MediumParams,
    rho: GaugeFunction,
    source: BoundarySource,
    grids: Sequence[Grid],
    strict: bool = True,
    perturbation: float = 0.0,
    max_workers: int = 2,
    **solver_kwargs,
) -> GaugeDiscrepancy:
    """Compares the DN traces of a medium and its gauge transform on a ladder of grids.

    The gauged medium is sampled by :func:`sample_gauged_medium`; for a static gauge and a medium without spatial
    b the two discrete solutions are related by rho exactly and the discrepancy comes from the boundary trace alone.

    Args:
        params: The original medium.
        rho: The gauge.
        source: Boundary data, applied to both media.
        grids: Grids from coarse to fine.
        strict: Passed to :func:`apply_gauge`.
        perturbation: Constant added to the gauged potential; nonzero values give a negative control.
        max_workers: The two solves per grid run on a thread pool of this size.
        **solver_kwargs: Passed to :func:`solve_nonlinear`.
    """
    gauged = apply_gauge(params, rho, strict=strict)
    if perturbation:
        gauged = perturb_potential(gauged, perturbation)
    grids = sorted(grids, key=lambda g: -max(g.dx))
    spacings, discrepancies, relative = [], [], []
    for grid in grids:

        def trace(medium: MediumParams, sampled: SampledMedium):
            field = solve_nonlinear(medium, source, grid, sampled=sampled, **solver_kwargs)
            return dn_trace(medium, field, sampled)

        if gauged is params:
            reference = trace(params, sample_medium(params, grid))
            other = reference
        else:
            sampled = sample_gauged_medium(params, rho, grid, strict=strict)
            if perturbation:
                sampled = replace(sampled, h=sampled.h + perturbation)
            with ThreadPoolExecutor(max_workers=max_workers) as executor:
                reference, other = executor.map(trace, (params, gauged), (sample_medium(params, grid), sampled))
        difference = (reference - other).l2_norm()
        norm = reference.l2_norm()
        spacings.append(max(grid.dx))
        discrepancies.append(difference)
        relative.append(difference / norm if norm > 0 else difference)
        module_logger.info(f"DN discrepancy on h={max(grid.dx):.4g}: {difference:.3e} (relative {relative[-1]:.3e})")
    rates = compute_rates(spacings, discrepancies)
    positive = [(h, e) for h, e in zip(spacings, discrepancies) if e > 0]
    if len(positive) >= 2:
        order = float(np.polyfit(np.log([h for h, _ in positive]), np.log([e for _, e in positive]), 1)[0])
    else:
        order = float("nan")
    reliable = len(positive) == len(discrepancies) and all(a > b for a, b in zip(discrepancies, discrepancies[1:]))
    return GaugeDiscrepancy(
        spacings=spacings,
        discrepancies=discrepancies,
        relative=relative,
        rates=rates,
        order=order,
        reliable=reliable,
        gauge=rho.as_dict(),
        perturbation=perturbation,
    )


# endregion DN discrepancy

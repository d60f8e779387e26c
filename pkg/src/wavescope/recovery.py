"""Recovery of the one-form difference, the gauge factor and the nonlinear coefficients of a hidden medium from
symbol-level measurements, relative to a known reference medium with the same metric.

The hidden medium is only accessed through a :class:`~wavescope.symbol_transport.MeasurementOracle`. For a gauged
pair ``b2 = b1 + 2 drho / rho``, ``beta_{m+1}^(2) = rho^m beta_{m+1}^(1)`` with ``rho = 1`` on the boundary, the
pipeline reconstructs ``Delta b = b2 - b1``, ``rho`` and ``beta2, beta3`` at each sample point.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from wavescope.base import (
    ConjugatePointError,
    DomainError,
    FieldFn,
    IllConditionedFramesError,
    InconsistencyError,
    InvalidInputError,
    NonExactnessError,
    RankDeficiencyError,
    SpacetimePoint,
    UndeterminedError,
    UnsupportedConfigurationError,
    as_spacetime,
    evaluate_one_form,
    evaluate_scalar,
)
from wavescope.covector_lab import (
    CovectorFrame,
    build_four_frame,
    build_i3_frame,
    four_frame_theta,
    interaction_sums,
    probe_directions,
)
from wavescope.gauge import GaugeFunction, time_power_derivatives
from wavescope.lorentz_geometry import Bicharacteristic, Box, ProductMetric, trace_bicharacteristic
from wavescope.symbol_transport import (
    DEFAULT_S_VALUES,
    MeasurementOracle,
    ObservationGeometry,
    join_paths,
    minkowski_to_metric,
)
from wavescope.utils import store_csv, store_json
from wavescope.wave_solver import MediumParams

module_logger = logging.getLogger(__name__)

PROBE_STEP = 1e-2
NONEXACT_TOL = 1e-6
ROOT_IMAG_TOL = 1e-8
COEFFICIENT_TOL = 1e-12
I3_SEPARATION = 0.1


# region one-form


@dataclass(kw_only=True)
class ProbeSamples:
    """``<Delta b, x'(s)>`` measured at parameters of one outgoing ray."""

    path: Bicharacteristic
    s: np.ndarray
    values: np.ndarray
    velocities: np.ndarray
    step: float

    def as_dict(self) -> dict:
        return dict(s=self.s, values=self.values, velocities=self.velocities, step=self.step)


def trace_probe_ray(
    metric: ProductMetric,
    point: SpacetimePoint | Sequence[float],
    zeta: Sequence[float],
    reach: float,
    ds: float = 1e-2,
) -> Bicharacteristic:
    """The ray through ``point`` with Minkowski-frame covector ``zeta``, sampled on ``[-reach, reach]``."""
    q = metric.check_point(point)
    covector = minkowski_to_metric(metric, q, zeta)
    backward = trace_bicharacteristic(metric, q, covector, -reach, ds=ds)
    forward = trace_bicharacteristic(metric, q, covector, reach, ds=ds)
    return join_paths(backward, forward)


def _log_ratio(reference: MeasurementOracle, hidden: MeasurementOracle, path: Bicharacteristic, s: float) -> float:
    denominator = reference.leg_functional(path, s)
    if denominator == 0:
        raise UndeterminedError(
            f"The reference coefficient 2 beta2^2 + beta3 vanishes at {path.position(0.0).tolist()}"
        )
    ratio = hidden.leg_functional(path, s) / denominator
    if not ratio > 0:
        raise InconsistencyError(f"Non-positive measurement ratio {ratio:.6g} at s={s:.6g}")
    return math.log(ratio)


def log_derivative_probe(
    point: SpacetimePoint | Sequence[float],
    zeta: Sequence[float],
    reference: MeasurementOracle,
    hidden: MeasurementOracle,
    s_values: Sequence[float] = (0.0,),
    step: float = PROBE_STEP,
    richardson: bool = True,
    path: Optional[Bicharacteristic] = None,
) -> ProbeSamples:
    """``-2 d/ds log E(s)`` where ``E`` is the ratio of the two media's leg functionals as the measurement point
    slides along the outgoing ray; for media sharing the metric this equals ``<Delta b, x'(s)>``.

    Central differences with step ``step``; with ``richardson=True`` combined with the half step as
    ``(4 D(step/2) - D(step)) / 3``.

    Raises:
        InconsistencyError: If E is not positive.
        UndeterminedError: If the reference leg functional vanishes.
    """
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    if step <= 0:
        raise InvalidInputError(f"step must be positive, got {step}")
    if path is None:
        reach = float(np.max(np.abs(s_values))) + 2 * step
        path = trace_probe_ray(reference.metric, point, zeta, reach)

    def central(s: float, h: float) -> float:
        return -(_log_ratio(reference, hidden, path, s + h) - _log_ratio(reference, hidden, path, s - h)) / h

    values = []
    for s in s_values:
        value = central(s, step)
        if richardson:
            value = (4.0 * central(s, step / 2) - value) / 3.0
        values.append(value)
    return ProbeSamples(
        path=path,
        s=s_values,
        values=np.array(values),
        velocities=np.atleast_2d(path.velocity(s_values)),
        step=step,
    )


@dataclass(kw_only=True)
class OneFormSolution:
    point: np.ndarray
    delta_b: np.ndarray
    residual: float
    """Root mean square residual of the (possibly over-determined) system."""
    rank: int

    def as_dict(self) -> dict:
        return dict(point=self.point, delta_b=self.delta_b, residual=self.residual, rank=self.rank)


def solve_oneform_point(
    velocities: np.ndarray,
    measurements: Sequence[float],
    point: Optional[SpacetimePoint | Sequence[float]] = None,
) -> OneFormSolution:
    """Solves ``<Delta b, x'_k> = m_k`` for the d + 1 components of ``Delta b``.

    Raises:
        RankDeficiencyError: If the velocities do not span the tangent space.
    """
    velocities = np.atleast_2d(np.asarray(velocities, dtype=float))
    measurements = np.asarray(measurements, dtype=float)
    n, components = velocities.shape
    if measurements.shape != (n,):
        raise InvalidInputError(f"Got {measurements.size} measurements for {n} directions")
    rank = int(np.linalg.matrix_rank(velocities))
    if rank < components:
        raise RankDeficiencyError(f"The probe directions have rank {rank} < {components}")
    delta_b, *_ = np.linalg.lstsq(velocities, measurements, rcond=None)
    residual = float(np.sqrt(np.mean((velocities @ delta_b - measurements) ** 2)))
    return OneFormSolution(
        point=np.full(components, np.nan) if point is None else as_spacetime(point),
        delta_b=delta_b,
        residual=residual,
        rank=rank,
    )


def recover_oneform(
    point: SpacetimePoint | Sequence[float],
    reference: MeasurementOracle,
    hidden: MeasurementOracle,
    directions: Optional[np.ndarray] = None,
    step: float = PROBE_STEP,
    richardson: bool = True,
) -> OneFormSolution:
    """``Delta b`` at a point from probes along ``dim + 1`` independent outgoing directions."""
    q = reference.metric.check_point(point)
    directions = probe_directions(reference.metric.dim) if directions is None else np.asarray(directions, dtype=float)
    velocities, measurements = [], []
    for zeta in directions:
        probe = log_derivative_probe(q, zeta, reference, hidden, step=step, richardson=richardson)
        velocities.append(probe.velocities[0])
        measurements.append(probe.values[0])
    return solve_oneform_point(np.array(velocities), measurements, q)


# endregion one-form
# region gauge factor


@dataclass(kw_only=True)
class RhoEstimate:
    point: np.ndarray
    value: float
    log_values: np.ndarray
    """``1/2 int Delta b`` along each path."""
    discrepancy: float
    """Largest difference between the path integrals."""

    def as_dict(self) -> dict:
        return dict(point=self.point, value=self.value, log_values=self.log_values, discrepancy=self.discrepancy)


def default_path_starts(point: np.ndarray, domain: Box) -> list[np.ndarray]:
    """Boundary points joined to ``point`` by straight spatial segments: the projections onto the lower faces of
    the first two axes, or onto both faces in one dimension."""
    q = as_spacetime(point)
    starts = []
    if domain.dim == 1:
        for face in domain.bounds[0]:
            starts.append(np.array([q[0], face]))
        return starts
    for axis in range(2):
        start = q.copy()
        start[axis + 1] = domain.bounds[axis][0]
        starts.append(start)
    return starts


def integrate_rho(
    delta_b: Callable[[np.ndarray], np.ndarray],
    point: SpacetimePoint | Sequence[float],
    starts: Sequence[Sequence[float]],
    nodes: int = 12,
    tol: float = NONEXACT_TOL,
) -> RhoEstimate:
    """``rho(point) = exp(1/2 int Delta b)`` along straight paths from boundary points where ``rho = 1``.

    Each path integral uses Gauss-Legendre quadrature with ``nodes`` nodes. All paths must agree.

    Args:
        delta_b: Maps a spacetime point to the d + 1 components of ``Delta b``.
        point: End point.
        starts: Start points on the boundary, at least one.
        nodes: Quadrature nodes per path.
        tol: Largest accepted difference between the logarithms obtained along different paths.

    Raises:
        NonExactnessError: If the path integrals disagree, i.e. ``Delta b`` is not the differential of a gauge.
    """
    q = as_spacetime(point)
    if not starts:
        raise InvalidInputError("integrate_rho needs at least one path.")
    tau, weights = np.polynomial.legendre.leggauss(nodes)
    tau, weights = 0.5 * (tau + 1.0), 0.5 * weights
    log_values = []
    for start in starts:
        start = as_spacetime(start)
        if start.shape != q.shape:
            raise InvalidInputError(f"Path start {start.tolist()} does not match the point {q.tolist()}")
        direction = q - start
        integral = 0.0
        for node, weight in zip(tau, weights):
            integral += weight * float(np.dot(np.asarray(delta_b(start + node * direction), dtype=float), direction))
        log_values.append(0.5 * integral)
    log_values = np.array(log_values)
    discrepancy = float(np.max(log_values) - np.min(log_values))
    if discrepancy > tol:
        raise NonExactnessError(
            f"Path integrals of Delta b to {q.tolist()} differ by {discrepancy:.3g} > {tol:.3g}; "
            f"Delta b is not a gauge differential",
            discrepancy,
        )
    value = math.exp(float(np.mean(log_values)))
    return RhoEstimate(point=q, value=value, log_values=log_values, discrepancy=discrepancy)


# endregion gauge factor
# region nonlinear coefficients


@dataclass(kw_only=True)
class BetaEstimate:
    beta2: float
    beta3: float
    residual: float
    """Relative consistency residual ``|beta3 - rho^2 beta3_ref|``."""
    combination: str
    """'main' for ``4 beta2^3 - 3 beta2 beta3``, 'fallback' for ``40 beta2^3 - 9 beta2 beta3``."""
    roots: np.ndarray

    def as_dict(self) -> dict:
        return dict(
            beta2=self.beta2, beta3=self.beta3, residual=self.residual, combination=self.combination, roots=self.roots
        )


def _real_roots(coefficients: Sequence[float]) -> np.ndarray:
    roots = np.roots(coefficients)
    real = roots[np.abs(roots.imag) <= ROOT_IMAG_TOL * np.maximum(1.0, np.abs(roots))].real
    polynomial = np.polynomial.Polynomial(coefficients[::-1])
    derivative = polynomial.deriv()
    polished = []
    for root in real:
        for _ in range(3):
            slope = derivative(root)
            if slope == 0:
                break
            root = root - polynomial(root) / slope
        polished.append(root)
    return np.array(sorted(polished))


def recover_betas_point(
    a: float,
    c_prime: float,
    rho_hint: float,
    beta_ref: tuple[float, float],
    e_prime: Optional[float] = None,
    tol: float = COEFFICIENT_TOL,
    gate: Optional[float] = 1e-3,
) -> BetaEstimate:
    """beta2 and beta3 from ``a = 2 beta2^2 + beta3`` and ``c' = 4 beta2^3 - 3 beta2 beta3``.

    Eliminating ``beta3 = a - 2 beta2^2`` leaves ``10 beta2^3 - 3 a beta2 - c' = 0``; when ``|c'| <= tol`` and
    ``e' = 40 beta2^3 - 9 beta2 beta3`` is available, ``58 beta2^3 - 9 a beta2 - e' = 0`` is used instead. Of the
    real roots the one closest to ``rho_hint * beta2_ref`` is selected.

    Args:
        a: The M3 combination of the medium.
        c_prime: The leading M4 combination.
        rho_hint: Gauge factor at the point, e.g. from :func:`integrate_rho`.
        beta_ref: ``(beta2, beta3)`` of the reference medium at the point.
        e_prime: The subleading M4 combination.
        tol: Threshold below which a combination counts as vanishing.
        gate: Largest accepted consistency residual; None only reports it.

    Raises:
        UndeterminedError: If ``a`` vanishes or both M4 combinations vanish.
        InconsistencyError: If there is no real root or the selected root fails the consistency gate.
    """
    if abs(a) <= tol:
        raise UndeterminedError("2 beta2^2 + beta3 vanishes; beta2 and beta3 are not determined")
    combination = "main"
    coefficients = [10.0, 0.0, -3.0 * a, -c_prime]
    if abs(c_prime) <= tol and e_prime is not None:
        if abs(e_prime) <= tol:
            raise UndeterminedError("Both 4 beta2^3 - 3 beta2 beta3 and 40 beta2^3 - 9 beta2 beta3 vanish")
        combination = "fallback"
        coefficients = [58.0, 0.0, -9.0 * a, -e_prime]
    roots = _real_roots(coefficients)
    if roots.size == 0:
        raise InconsistencyError(f"No real root of {coefficients}")
    target = rho_hint * beta_ref[0]
    beta2 = float(roots[np.argmin(np.abs(roots - target))])
    polynomial = np.polynomial.Polynomial(coefficients[::-1])
    scale = abs(coefficients[0] * target**3) + abs(coefficients[2] * target) + abs(coefficients[3])
    if abs(polynomial(target)) <= max(abs(polynomial(beta2)), 1e-14 * scale):
        # the hint is a root to rounding; keeps the null case exact
        beta2 = float(target)
    beta3 = a - 2.0 * beta2**2
    expected = rho_hint**2 * beta_ref[1]
    residual = abs(beta3 - expected) / max(1.0, abs(expected))
    if gate is not None and residual > gate:
        raise InconsistencyError(
            f"Selected root beta2={beta2:.6g} gives beta3={beta3:.6g}, expected {expected:.6g} "
            f"(residual {residual:.3g})"
        )
    return BetaEstimate(beta2=beta2, beta3=beta3, residual=residual, combination=combination, roots=roots)


def rho_from_coefficients(
    a1: float,
    a2: float,
    c1: float,
    c2: float,
    e1: Optional[float] = None,
    e2: Optional[float] = None,
    tol: float = COEFFICIENT_TOL,
) -> float:
    """The gauge factor as ``(c'2 a1) / (c'1 a2)``, or ``(e'2 a1) / (e'1 a2)`` when the leading combination vanishes.

    Raises:
        UndeterminedError: If the needed combinations vanish.
    """
    if abs(a1) <= tol or abs(a2) <= tol:
        raise UndeterminedError("2 beta2^2 + beta3 vanishes; rho is not determined by the coefficients")
    if abs(c1) > tol and abs(c2) > tol:
        return c2 * a1 / (c1 * a2)
    if e1 is not None and e2 is not None and abs(e1) > tol and abs(e2) > tol:
        return e2 * a1 / (e1 * a2)
    raise UndeterminedError("Both M4 combinations vanish; rho is not determined by the coefficients")


def beta_relation_residuals(
    rho: np.ndarray,
    hidden: dict[int, np.ndarray],
    reference: dict[int, np.ndarray],
) -> dict[int, np.ndarray]:
    """Relative residuals of ``beta_{m+1}^(2) = rho^m beta_{m+1}^(1)`` for every order present in both media."""
    rho = np.asarray(rho, dtype=float)
    residuals = {}
    for order in sorted(set(hidden) & set(reference)):
        expected = rho ** (order - 1) * np.asarray(reference[order], dtype=float)
        residuals[order] = np.abs(np.asarray(hidden[order], dtype=float) - expected) / np.maximum(1.0, np.abs(expected))
    return residuals


# endregion nonlinear coefficients
# region pipeline


RESULT_HEADER = ("index", "t", "x", "rho", "rho_discrepancy", "beta2", "beta3", "oneform_residual", "beta_residual")


@dataclass(kw_only=True)
class RecoveryResult:
    points: np.ndarray
    """Sample points that were recovered, shape ``(N, d + 1)``."""
    delta_b: np.ndarray
    rho: np.ndarray
    rho_discrepancy: np.ndarray
    rho_from_coefficients: np.ndarray
    beta2: np.ndarray
    beta3: np.ndarray
    beta_ref: np.ndarray
    """``(beta2, beta3)`` of the reference medium at the points, shape ``(N, 2)``."""
    oneform_residual: np.ndarray
    beta_residual: np.ndarray
    skipped: list[dict] = field(default_factory=list)
    """Points that could not be processed, with the reason."""

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def records(self) -> list[dict]:
        return [
            dict(
                point=self.points[k],
                delta_b=self.delta_b[k],
                rho=self.rho[k],
                rho_discrepancy=self.rho_discrepancy[k],
                rho_from_coefficients=self.rho_from_coefficients[k],
                beta2=self.beta2[k],
                beta3=self.beta3[k],
                oneform_residual=self.oneform_residual[k],
                beta_residual=self.beta_residual[k],
            )
            for k in range(self.size)
        ]

    def as_dict(self) -> dict:
        return dict(points=self.records(), skipped=self.skipped)

    def rows(self):
        for k in range(self.size):
            point = self.points[k]
            yield (
                k,
                point[0],
                " ".join(repr(float(v)) for v in point[1:]),
                self.rho[k],
                self.rho_discrepancy[k],
                self.beta2[k],
                self.beta3[k],
                self.oneform_residual[k],
                self.beta_residual[k],
            )

    def to_json(self, filepath: Path | str):
        store_json(self.as_dict(), filepath)

    def to_csv(self, filepath: Path | str) -> int:
        return store_csv(self.rows(), RESULT_HEADER, filepath)


def _betas(medium: MediumParams, q: np.ndarray) -> tuple[float, float, float]:
    return tuple(float(evaluate_scalar(medium.beta(k), q[0], q[1:])) for k in (2, 3, 4))


def _recover_point(
    q: np.ndarray,
    reference: MediumParams,
    reference_oracle: MeasurementOracle,
    hidden: MeasurementOracle,
    domain: Box,
    frame3: CovectorFrame,
    frame4: CovectorFrame,
    step: float,
    richardson: bool,
    nodes: int,
    nonexact_tol: float,
    gate: Optional[float],
    s_values: Sequence[float],
) -> dict:
    beta2_ref, beta3_ref, _ = _betas(reference, q)
    if abs(2.0 * beta2_ref**2 + beta3_ref) <= COEFFICIENT_TOL:
        raise UndeterminedError(f"2 beta2^2 + beta3 of the reference vanishes at {q.tolist()}")

    def delta_b(p):
        return recover_oneform(p, reference_oracle, hidden, step=step, richardson=richardson).delta_b

    oneform = recover_oneform(q, reference_oracle, hidden, step=step, richardson=richardson)
    rho = integrate_rho(delta_b, q, default_path_starts(q, domain), nodes=nodes, tol=nonexact_tol)

    geometry3 = ObservationGeometry.build(reference.metric, domain, q, frame3)
    ratio3 = hidden.m3(geometry3).value / reference_oracle.m3(geometry3).value
    geometry4 = ObservationGeometry.build(reference.metric, domain, q, frame4)
    m4_ref, m4_hidden = reference_oracle.m4(geometry4, s_values), hidden.m4(geometry4, s_values)
    a1 = 2.0 * beta2_ref**2 + beta3_ref
    c1 = 4.0 * beta2_ref**3 - 3.0 * beta2_ref * beta3_ref
    e1 = 40.0 * beta2_ref**3 - 9.0 * beta2_ref * beta3_ref
    # incoming legs contribute rho(q)^-1 each, the outgoing leg rho(q)
    a2 = a1 * ratio3 * rho.value**2
    c2 = c1 * m4_hidden.leading / m4_ref.leading * rho.value**3 if m4_ref.leading else 0.0
    e2 = e1 * m4_hidden.subleading / m4_ref.subleading * rho.value**3 if m4_ref.subleading else 0.0
    betas = recover_betas_point(a2, c2, rho.value, (beta2_ref, beta3_ref), e_prime=e2, gate=gate)
    try:
        rho_coefficients = rho_from_coefficients(a1, a2, c1, c2, e1, e2)
    except UndeterminedError:
        rho_coefficients = math.nan
    module_logger.debug(
        f"Recovered rho={rho.value:.10g}, beta2={betas.beta2:.10g}, beta3={betas.beta3:.10g} at {q.tolist()}"
    )
    return dict(
        point=q,
        delta_b=oneform.delta_b,
        rho=rho.value,
        rho_discrepancy=rho.discrepancy,
        rho_from_coefficients=rho_coefficients,
        beta2=betas.beta2,
        beta3=betas.beta3,
        beta_ref=(beta2_ref, beta3_ref),
        oneform_residual=oneform.residual,
        beta_residual=betas.residual,
    )


def recover_medium(
    reference: MediumParams,
    hidden: MeasurementOracle,
    points: Sequence[SpacetimePoint | Sequence[float]],
    domain: Box,
    frame3: Optional[CovectorFrame] = None,
    frame4: Optional[CovectorFrame] = None,
    step: float = PROBE_STEP,
    richardson: bool = True,
    nodes: int = 12,
    nonexact_tol: float = NONEXACT_TOL,
    gate: Optional[float] = None,
    s_values: Sequence[float] = DEFAULT_S_VALUES,
    max_workers: Optional[int] = None,
) -> RecoveryResult:
    """Runs the recovery at every sample point.

    Points at which the construction is degenerate (vanishing coefficient combinations, conjugate points, legs
    that miss the boundary) are skipped and reported in ``RecoveryResult.skipped``. Points run concurrently.

    Raises:
        UnsupportedConfigurationError: Unless the metric is 3+1 dimensional (the frames live in 3+1 dimensions).
        InvalidInputError: If the hidden oracle uses a different metric.
        NonExactnessError: If the recovered one-form is not a gauge differential.
    """
    if not isinstance(hidden, MeasurementOracle):
        raise TypeError(f"hidden must be a MeasurementOracle, got {type(hidden)!r}")
    metric = reference.metric
    if metric.dim != 3:
        raise UnsupportedConfigurationError(f"Recovery needs 3+1 dimensions, the metric has {metric.dim}+1")
    if hidden.metric is not metric and hidden.metric.as_dict() != metric.as_dict():
        raise InvalidInputError("The hidden medium does not share the reference metric.")
    frame3 = build_i3_frame(math.pi / 2, math.pi / 3) if frame3 is None else frame3
    frame4 = build_four_frame(0.3, four_frame_theta(0.1)) if frame4 is None else frame4
    reference_oracle = MeasurementOracle(reference, name="reference")
    arrays = [metric.check_point(p) for p in points]

    def task(q):
        try:
            return _recover_point(
                q,
                reference,
                reference_oracle,
                hidden,
                domain,
                frame3,
                frame4,
                step,
                richardson,
                nodes,
                nonexact_tol,
                gate,
                s_values,
            )
        except (UndeterminedError, ConjugatePointError, DomainError) as e:
            module_logger.warning(f"Skipping {q.tolist()}: {e}")
            return dict(point=q, reason=f"{e.__class__.__name__}: {e}")

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        outcomes = list(executor.map(task, arrays))
    done = [o for o in outcomes if "reason" not in o]
    skipped = [o for o in outcomes if "reason" in o]
    d = metric.dim

    def stack(key, shape=()):
        if not done:
            return np.zeros((0,) + shape)
        return np.array([o[key] for o in done], dtype=float)

    result = RecoveryResult(
        points=stack("point", (d + 1,)),
        delta_b=stack("delta_b", (d + 1,)),
        rho=stack("rho"),
        rho_discrepancy=stack("rho_discrepancy"),
        rho_from_coefficients=stack("rho_from_coefficients"),
        beta2=stack("beta2"),
        beta3=stack("beta3"),
        beta_ref=stack("beta_ref", (2,)),
        oneform_residual=stack("oneform_residual"),
        beta_residual=stack("beta_residual"),
        skipped=skipped,
    )
    module_logger.info(f"Recovered {result.size} of {len(arrays)} sample points ({len(skipped)} skipped)")
    return result


# endregion pipeline
# region verification


@dataclass(kw_only=True)
class GaugeRelationReport:
    residuals: dict[str, np.ndarray]
    """Pointwise residuals per relation."""

    @property
    def max(self) -> dict[str, float]:
        return {key: float(np.max(value)) if value.size else 0.0 for key, value in self.residuals.items()}

    @property
    def l2(self) -> dict[str, float]:
        return {
            key: float(np.sqrt(np.mean(value**2))) if value.size else 0.0 for key, value in self.residuals.items()
        }

    def worst_points(self, key: str, threshold: float) -> np.ndarray:
        """Indices whose residual exceeds the threshold."""
        return np.flatnonzero(self.residuals[key] > threshold)

    def as_dict(self) -> dict:
        return dict(residuals=self.residuals, max=self.max, l2=self.l2)


def _relative(value: np.ndarray, expected: np.ndarray) -> np.ndarray:
    return np.abs(value - expected) / np.maximum(1.0, np.abs(expected))


def verify_gauge_relations(
    result: RecoveryResult,
    reference: MediumParams,
    hidden: MediumParams,
    rho_truth: Optional[GaugeFunction] = None,
) -> GaugeRelationReport:
    """Pointwise residuals of the recovered quantities against the true media.

    ``oneform`` compares the recovered ``Delta b`` with ``b_hidden - b_reference``, ``beta2``/``beta3`` compare the
    recovered coefficients with the hidden ones, ``beta2_relation``/``beta3_relation`` check
    ``beta_{m+1} = rho^m beta_{m+1}^ref`` with the recovered rho, and ``rho`` (only with ``rho_truth``) compares
    the recovered gauge factor.
    """
    q = result.points
    t, x = q[:, 0], q[:, 1:]
    true_delta = evaluate_one_form(hidden.b, t, x) - evaluate_one_form(reference.b, t, x)
    hidden_beta2 = evaluate_scalar(hidden.beta(2), t, x)
    hidden_beta3 = evaluate_scalar(hidden.beta(3), t, x)
    residuals = dict(
        oneform=np.max(np.abs(result.delta_b - true_delta), axis=-1) if q.size else np.zeros(0),
        beta2=_relative(result.beta2, hidden_beta2),
        beta3=_relative(result.beta3, hidden_beta3),
        beta2_relation=_relative(result.beta2, result.rho * result.beta_ref[:, 0]),
        beta3_relation=_relative(result.beta3, result.rho**2 * result.beta_ref[:, 1]),
    )
    if rho_truth is not None:
        expected = rho_truth(t, x)
        residuals["rho"] = np.abs(result.rho - expected) / np.abs(expected)
        residuals["oneform_gauge"] = np.max(np.abs(result.delta_b - 2.0 * rho_truth.log_differential(t, x)), axis=-1)
    return GaugeRelationReport(residuals=residuals)


@dataclass(kw_only=True)
class TimeIndependenceVerdict:
    passed: bool
    branch: str
    """'beta2', 'beta3' or 'beta4': the lowest nonvanishing order that decides the verdict."""
    magnitudes: dict[str, float]
    I3: tuple[float, float]
    left_sides: tuple[float, float]

    def as_dict(self) -> dict:
        return dict(
            passed=self.passed, branch=self.branch, magnitudes=self.magnitudes, I3=self.I3, left_sides=self.left_sides
        )


def _value_at(value: float | FieldFn | None, q: np.ndarray) -> float:
    if value is None:
        return 0.0
    if callable(value):
        return float(evaluate_scalar(value, q[0], q[1:]))
    return float(value)


def verify_time_independence(
    point: SpacetimePoint | Sequence[float],
    rho: GaugeFunction,
    betas: Sequence[float | FieldFn | None],
    frames: tuple[CovectorFrame, CovectorFrame],
    tol: float = 1e-12,
) -> TimeIndependenceVerdict:
    """Checks ``c3 (1 - beta2) + 2 c2 beta2 I3 = 0`` with ``c_k = 2 rho^-1 beta_k d_t(rho^k)`` for two frames.

    As ``(1, I3)`` of the two frames are independent, the two left sides determine ``c3 (1 - beta2)`` and
    ``c2 beta2`` separately. Where beta2 and beta3 vanish the condition ``c4 beta4 = 0`` decides.

    Args:
        point: The sample point.
        rho: Candidate gauge factor.
        betas: ``(beta2, beta3, beta4)`` as numbers or fields.
        frames: Two three-member frames.
        tol: Magnitudes above this count as violations.

    Raises:
        IllConditionedFramesError: If the I3 values differ by less than 0.1.
        UndeterminedError: If beta2, beta3 and beta4 all vanish at the point.
    """
    q = as_spacetime(point)
    if len(frames) != 2 or any(f.size != 3 for f in frames):
        raise InvalidInputError("Two three-member frames are needed.")
    i3 = tuple(float(interaction_sums(f).I3) for f in frames)
    if abs(i3[0] - i3[1]) < I3_SEPARATION:
        raise IllConditionedFramesError(
            f"The frames have I3 = {i3[0]:.6g} and {i3[1]:.6g}, closer than {I3_SEPARATION}"
        )
    beta = {k: _value_at(v, q) for k, v in zip((2, 3, 4), tuple(betas) + (None,) * (3 - len(betas)))}
    t, x = q[0], q[1:]
    r = float(rho(t, x))
    c = {k: 2.0 * beta[k] * float(time_power_derivatives(rho, k, t, x)[0]) / r for k in (2, 3, 4)}
    left = tuple(c[3] * (1.0 - beta[2]) + 2.0 * c[2] * beta[2] * value for value in i3)
    system = np.array([[1.0, i3[0]], [1.0, i3[1]]])
    c3_term, twice_c2_beta2 = np.linalg.solve(system, np.array(left))
    magnitudes = dict(
        c3_term=abs(float(c3_term)),
        c2_beta2=abs(float(twice_c2_beta2)) / 2.0,
        c4_beta4=abs(c[4] * beta[4]),
    )
    if abs(beta[2]) > tol:
        branch = "beta2"
        passed = magnitudes["c3_term"] <= tol and magnitudes["c2_beta2"] <= tol
    elif abs(beta[3]) > tol:
        branch = "beta3"
        passed = magnitudes["c3_term"] <= tol
    elif abs(beta[4]) > tol:
        branch = "beta4"
        passed = magnitudes["c4_beta4"] <= tol
    else:
        raise UndeterminedError(f"beta2, beta3 and beta4 vanish at {q.tolist()}")
    if not passed:
        module_logger.info(f"Time dependence detected at {q.tolist()} via {branch}: {magnitudes}")
    return TimeIndependenceVerdict(passed=passed, branch=branch, magnitudes=magnitudes, I3=i3, left_sides=left)


# endregion verification

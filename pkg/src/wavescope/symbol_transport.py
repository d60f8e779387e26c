"""Principal-symbol transport along null bicharacteristics and the symbol-level measurement functionals.

The symbol of a distorted plane wave solves ``(d/ds - 1/2 b(x'(s))) a = 0`` along the ray (the half-density term
is taken to be zero; it only depends on the metric and cancels in every ratio between two media sharing it), so
that ``a(s1) / a(s0) = exp(-1/2 int_{s0}^{s1} b(x'(s)) ds)`` with the natural pairing of the one-form and the ray
velocity. Measurement functionals combine the nonlinear coefficients at an interaction point ``q`` with the
transport ratios of the legs joining ``q`` to the boundary.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp

from wavescope.base import (
    ConjugatePointError,
    DomainError,
    FieldFn,
    InvalidInputError,
    PathCoverageError,
    SpacetimePoint,
    evaluate_one_form,
    evaluate_scalar,
)
from wavescope.covector_lab import (
    CovectorFrame,
    InteractionCoefficients,
    LaurentFit,
    fit_laurent,
    interaction_sums,
    sweep_four_frame,
)
from wavescope.lorentz_geometry import (
    BOUNDARY_TOL,
    Bicharacteristic,
    Box,
    ProductMetric,
    detect_conjugate_point,
    trace_bicharacteristic,
)
from wavescope.wave_solver import MediumParams

module_logger = logging.getLogger(__name__)

DEFAULT_S_VALUES = tuple(np.linspace(0.05, 0.2, 24))
"""Expansion variables of the four-frame sweep used to extract the leading M4 functional."""
LAURENT_ORDERS = (-3, -2, -1, 0, 1, 2)
DEGENERATE_TOL = 1e-14


# region transport


@dataclass(kw_only=True)
class SymbolSample:
    """Value of the transported symbol at one parameter of a path, relative to its value at ``reference``."""

    path: Bicharacteristic
    s: float
    value: float
    reference: float = 0.0

    @property
    def point(self) -> np.ndarray:
        return self.path.position(self.s)

    def as_dict(self) -> dict:
        return dict(s=self.s, reference=self.reference, value=self.value, point=self.point)


def pairing_along(path: Bicharacteristic, b: Optional[FieldFn], s: float | np.ndarray) -> np.ndarray:
    """``b(x'(s))`` with the natural pairing of covector components and velocity components."""
    points = np.atleast_2d(path.position(s))
    velocities = np.atleast_2d(path.velocity(s))
    components = evaluate_one_form(b, points[:, 0], points[:, 1:])
    values = np.sum(components * velocities, axis=-1)
    return values if np.ndim(s) else float(values[0])


def _check_span(path: Bicharacteristic, s0: float, s1: float):
    if not path.covers(s0, s1):
        raise PathCoverageError(
            f"Parameters [{min(s0, s1)}, {max(s0, s1)}] are not covered by the path [{path.start}, {path.end}]"
        )


def transport_ode_solve(
    path: Bicharacteristic,
    b: Optional[FieldFn],
    s0: float,
    s1: float,
    rtol: float = 1e-12,
    atol: float = 1e-14,
) -> float:
    """Ratio ``a(s1) / a(s0)`` obtained by integrating the transport equation for ``log a`` with DOP853.

    Raises:
        PathCoverageError: If the path does not cover ``[s0, s1]``.
    """
    _check_span(path, s0, s1)
    if b is None or s0 == s1:
        return 1.0

    def rhs(s, _log_a):
        return [0.5 * pairing_along(path, b, float(s))]

    solution = solve_ivp(rhs, (s0, s1), [0.0], method="DOP853", rtol=rtol, atol=atol)
    if not solution.success:
        raise InvalidInputError(f"Transport ODE failed on [{s0}, {s1}]: {solution.message}")
    return math.exp(-float(solution.y[0, -1]))


def transport_closed_form(
    path: Bicharacteristic,
    b: Optional[FieldFn],
    s0: float,
    s1: float,
    epsabs: float = 1e-14,
    epsrel: float = 1e-13,
    limit: int = 200,
) -> float:
    """``exp(-1/2 int_{s0}^{s1} b(x'(s)) ds)`` by adaptive quadrature of the pairing along the interpolated path."""
    _check_span(path, s0, s1)
    if b is None or s0 == s1:
        return 1.0
    integral, error = quad(lambda s: pairing_along(path, b, s), s0, s1, epsabs=epsabs, epsrel=epsrel, limit=limit)
    module_logger.debug(f"Transport integral over [{s0:.6g}, {s1:.6g}]: {integral:.15g} (error estimate {error:.2g})")
    return math.exp(-0.5 * integral)


def symbol_along(
    path: Bicharacteristic,
    b: Optional[FieldFn],
    s_values: Sequence[float],
    reference: float = 0.0,
    method: str = "closed_form",
) -> list[SymbolSample]:
    """Symbol values relative to the value at ``reference`` at several parameters of a path."""
    transport = _TRANSPORTS.get(method)
    if transport is None:
        raise ValueError(f"method must be one of {sorted(_TRANSPORTS)}, got {method!r}")
    return [
        SymbolSample(path=path, s=float(s), value=transport(path, b, reference, float(s)), reference=reference)
        for s in s_values
    ]


_TRANSPORTS = dict(closed_form=transport_closed_form, ode=transport_ode_solve)


# endregion transport
# region observation geometry


def minkowski_to_metric(metric: ProductMetric, point: np.ndarray, zeta: Sequence[float]) -> np.ndarray:
    """Maps a lightlike covector of the Minkowski tangent frame at ``point`` to a g-lightlike covector with
    ``zeta_0 = -1/2``, whose velocity is ``(1, c n)``."""
    zeta = np.asarray(zeta, dtype=float)
    d = metric.dim
    if zeta.shape != (d + 1,):
        raise InvalidInputError(f"Expected {d + 1} covector components, got shape {zeta.shape}")
    spatial = zeta[1:]
    norm = float(np.linalg.norm(spatial))
    if norm == 0:
        raise InvalidInputError(f"Covector {zeta.tolist()} has no spatial part")
    if abs(norm - abs(zeta[0])) > 1e-9 * norm:
        raise InvalidInputError(f"Covector {zeta.tolist()} is not lightlike in the Minkowski frame")
    c = float(metric.c(point[1:]))
    sign = 1.0 if zeta[0] < 0 else -1.0
    return np.concatenate([[-0.5], sign * 0.5 * spatial / (norm * c)])


def _frame_components(frame: CovectorFrame, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Members and outgoing covector of a 3+1 frame, restricted to the first ``dim`` spatial axes."""
    members = frame.members[:, : dim + 1]
    target = np.array(frame.target, dtype=float)
    if frame.kind == "three":
        target = target * np.array([-1.0, 1.0, 1.0, 1.0])
    if target[0] > 0:
        target = -target
    return members, target[: dim + 1]


def _outside(domain: Box):
    def stop(point: np.ndarray) -> bool:
        return not bool(domain.contains(point[1:]))

    return stop


def join_paths(backward: Bicharacteristic, forward: Bicharacteristic) -> Bicharacteristic:
    """Concatenates a path sampled on ``[s_min, 0]`` with one sampled on ``[0, s_max]``."""
    if backward.end != 0.0 or forward.start != 0.0:
        raise InvalidInputError("Paths must meet at s = 0.")
    return Bicharacteristic(
        s=np.concatenate([backward.s, forward.s[1:]]),
        points=np.concatenate([backward.points, forward.points[1:]]),
        covectors=np.concatenate([backward.covectors, forward.covectors[1:]]),
        metric=forward.metric,
        truncated=backward.truncated or forward.truncated,
        entry=forward.entry,
        exit=forward.exit,
    )


@dataclass(kw_only=True)
class Leg:
    """A ray between the interaction point (``s = 0``) and the boundary of the observation domain."""

    path: Bicharacteristic
    boundary_parameter: float
    incoming: bool
    covector: np.ndarray
    """Covector at the interaction point."""
    conjugate: Optional[float] = None

    @property
    def span(self) -> tuple[float, float]:
        """Parameters in the direction of propagation."""
        return (self.boundary_parameter, 0.0) if self.incoming else (0.0, self.boundary_parameter)

    @property
    def boundary_point(self) -> np.ndarray:
        return self.path.position(self.boundary_parameter)

    def ratio(self, b: Optional[FieldFn], method: str = "closed_form") -> float:
        """Transport ratio in the direction of propagation."""
        s0, s1 = self.span
        return _TRANSPORTS[method](self.path, b, s0, s1)

    def as_dict(self) -> dict:
        return dict(
            incoming=self.incoming,
            covector=self.covector,
            boundary_parameter=self.boundary_parameter,
            boundary_point=self.boundary_point,
            conjugate=self.conjugate,
        )


def _reaches_boundary(path: Bicharacteristic, parameter: Optional[float], domain: Box) -> bool:
    if parameter is None:
        return False
    return float(domain.signed_distance(path.position(parameter)[1:])) >= -BOUNDARY_TOL


def _leg_conjugate(path: Bicharacteristic, lo: float, hi: float) -> Optional[float]:
    conjugate = detect_conjugate_point(path)
    if conjugate is not None and lo < conjugate < hi:
        return conjugate
    return None


@dataclass(kw_only=True)
class ObservationGeometry:
    """Incoming legs from the boundary to ``point`` along the frame members, and the outgoing leg along the
    decomposed covector."""

    metric: ProductMetric
    domain: Box
    point: np.ndarray
    incoming: list[Leg]
    outgoing: Leg
    frame: Optional[CovectorFrame] = None

    @classmethod
    def build(
        cls,
        metric: ProductMetric,
        domain: Box,
        point: SpacetimePoint | Sequence[float],
        frame: Optional[CovectorFrame] = None,
        outgoing: Optional[Sequence[float]] = None,
        s_max: float = 10.0,
        ds: float = 1e-2,
        margin: float = 0.05,
        check_conjugate: bool = True,
    ) -> ObservationGeometry:
        """Traces the legs of an interaction at ``point``.

        Args:
            metric: The shared metric.
            domain: The observation domain; legs end on its boundary.
            point: The interaction point, inside the domain.
            frame:
                Frame whose members give the incoming directions and whose target gives the outgoing one, all in
                the Minkowski tangent frame. Only the first ``dim`` spatial axes are used.
            outgoing: Outgoing Minkowski covector; required without a frame, overrides the frame target otherwise.
            s_max: Longest leg parameter.
            ds: Nominal tracing step.
            margin: The outgoing ray is also traced backwards by this parameter so that it can be differentiated at q.
            check_conjugate: Refuse legs with a conjugate point between q and the boundary.

        Raises:
            DomainError: If the point lies outside the domain or a leg does not reach the boundary.
            ConjugatePointError: If a leg carries a conjugate point.
        """
        q = metric.check_point(point)
        if not bool(domain.contains(q[1:])):
            raise DomainError(f"Interaction point {q.tolist()} lies outside the observation domain")
        if frame is None and outgoing is None:
            raise InvalidInputError("Either a frame or an outgoing covector is needed.")
        members = np.zeros((0, metric.dim + 1))
        target = None
        if frame is not None:
            members, target = _frame_components(frame, metric.dim)
        if outgoing is not None:
            target = np.asarray(outgoing, dtype=float)
        stop = _outside(domain)

        incoming = []
        for member in members:
            zeta = minkowski_to_metric(metric, q, member)
            path = trace_bicharacteristic(metric, q, zeta, -s_max, ds=ds, stop=stop, domain=domain)
            if not _reaches_boundary(path, path.entry, domain):
                raise DomainError(f"Incoming leg along {member.tolist()} does not reach the boundary within s={s_max}")
            incoming.append(Leg(path=path, boundary_parameter=path.entry, incoming=True, covector=zeta))

        zeta = minkowski_to_metric(metric, q, target)
        forward = trace_bicharacteristic(metric, q, zeta, s_max, ds=ds, stop=stop, domain=domain)
        if not _reaches_boundary(forward, forward.exit, domain):
            raise DomainError(f"Outgoing leg along {target.tolist()} does not reach the boundary within s={s_max}")
        path = forward
        if margin > 0:
            path = join_paths(trace_bicharacteristic(metric, q, zeta, -margin, ds=ds), forward)
        out_leg = Leg(path=path, boundary_parameter=forward.exit, incoming=False, covector=zeta)

        geometry = cls(metric=metric, domain=domain, point=q, incoming=incoming, outgoing=out_leg, frame=frame)
        if check_conjugate:
            geometry.certify()
        return geometry

    @property
    def legs(self) -> list[Leg]:
        return self.incoming + [self.outgoing]

    def certify(self):
        """Records conjugate points of the legs and raises on the first one."""
        for leg in self.incoming:
            # detection runs from the start of the path, i.e. from the boundary side
            leg.conjugate = _leg_conjugate(leg.path, leg.boundary_parameter, 0.0)
        forward = self.outgoing.path
        if forward.start < 0:
            forward = Bicharacteristic(
                s=forward.s[forward.s >= 0],
                points=forward.points[forward.s >= 0],
                covectors=forward.covectors[forward.s >= 0],
                metric=forward.metric,
            )
        self.outgoing.conjugate = _leg_conjugate(forward, 0.0, self.outgoing.boundary_parameter)
        for leg in self.legs:
            if leg.conjugate is not None:
                raise ConjugatePointError(
                    f"{'Incoming' if leg.incoming else 'Outgoing'} leg at {self.point.tolist()} has a conjugate "
                    f"point at s={leg.conjugate:.6g}",
                    leg.conjugate,
                )

    def transports(self, b: Optional[FieldFn], method: str = "closed_form") -> tuple[list[float], float]:
        """Incoming ratios and the outgoing ratio."""
        return [leg.ratio(b, method) for leg in self.incoming], self.outgoing.ratio(b, method)

    def as_dict(self) -> dict:
        return dict(
            point=self.point,
            frame=None if self.frame is None else self.frame.as_dict(),
            incoming=[leg.as_dict() for leg in self.incoming],
            outgoing=self.outgoing.as_dict(),
        )


# endregion observation geometry
# region measurement functionals


@dataclass(kw_only=True)
class MeasurementFunctional:
    kind: str
    """'M3' or 'M4'."""
    point: np.ndarray
    value: float
    coefficient: float
    """Coefficient combination of the nonlinear terms at the interaction point."""
    transport: float
    """Product of all leg ratios and source symbols."""
    frame: Optional[dict] = None
    degenerate: bool = False
    leading: Optional[float] = None
    """M4 only: small-s leading functional, proportional to ``4 beta2^3 - 3 beta2 beta3``."""
    subleading: Optional[float] = None
    """M4 only: functional proportional to ``40 beta2^3 - 9 beta2 beta3``."""
    fit: Optional[LaurentFit] = None

    def as_dict(self) -> dict:
        return dict(
            kind=self.kind,
            point=self.point,
            value=self.value,
            coefficient=self.coefficient,
            transport=self.transport,
            frame=self.frame,
            degenerate=self.degenerate,
            leading=self.leading,
            subleading=self.subleading,
            fit=None if self.fit is None else self.fit.as_dict(),
        )


def _betas_at(medium: MediumParams, point: np.ndarray) -> tuple[float, float, float]:
    t, x = point[0], point[1:]
    return tuple(float(evaluate_scalar(medium.beta(k), t, x)) for k in (2, 3, 4))


def _source_product(source_symbols: Optional[Sequence[float]], n: int) -> float:
    if source_symbols is None:
        return 1.0
    if len(source_symbols) != n:
        raise InvalidInputError(f"Expected {n} source symbols, got {len(source_symbols)}")
    return float(np.prod(source_symbols))


def _transport_product(geometry: ObservationGeometry, medium: MediumParams, method: str) -> float:
    if medium.metric is not geometry.metric and medium.metric.as_dict() != geometry.metric.as_dict():
        raise InvalidInputError("The geometry was traced for a different metric.")
    incoming, outgoing = geometry.transports(medium.b, method)
    return outgoing * float(np.prod(incoming))


def synthesize_m3(
    geometry: ObservationGeometry,
    medium: MediumParams,
    source_symbols: Optional[Sequence[float]] = None,
    method: str = "closed_form",
) -> MeasurementFunctional:
    """``(2 beta2^2 + beta3)(q)`` times the outgoing and incoming transport ratios and the source symbols.

    Raises:
        InvalidInputError: If the geometry does not have three incoming legs.
    """
    if len(geometry.incoming) != 3:
        raise InvalidInputError(f"M3 needs three incoming legs, got {len(geometry.incoming)}")
    beta2, beta3, _ = _betas_at(medium, geometry.point)
    coefficient = 2.0 * beta2**2 + beta3
    transport = _transport_product(geometry, medium, method) * _source_product(source_symbols, 3)
    degenerate = abs(coefficient) <= DEGENERATE_TOL
    if degenerate:
        module_logger.warning(f"2 beta2^2 + beta3 vanishes at {geometry.point.tolist()}; M3 is degenerate")
    return MeasurementFunctional(
        kind="M3",
        point=geometry.point,
        value=coefficient * transport,
        coefficient=coefficient,
        transport=transport,
        frame=None if geometry.frame is None else geometry.frame.as_dict(),
        degenerate=degenerate,
    )


def fit_four_frame_coefficient(
    phi: float,
    beta2: float,
    beta3: float,
    beta4: float = 0.0,
    s_values: Sequence[float] = DEFAULT_S_VALUES,
    orders: Sequence[int] = LAURENT_ORDERS,
) -> tuple[float, float, LaurentFit]:
    """Fits the four-frame coefficient over a sweep of expansion variables and returns the combinations
    ``4 beta2^3 - 3 beta2 beta3`` and ``40 beta2^3 - 9 beta2 beta3`` read off the singular coefficients."""
    samples = [(s, ic.curly_c) for s, ic in sweep_four_frame(phi, s_values, beta2, beta3, beta4)]
    fit = fit_laurent(samples, orders)
    return -2.0 * fit.coefficient(-3), 4.0 * fit.coefficient(-1), fit


def synthesize_m4(
    geometry: ObservationGeometry,
    medium: MediumParams,
    source_symbols: Optional[Sequence[float]] = None,
    s_values: Sequence[float] = DEFAULT_S_VALUES,
    method: str = "closed_form",
) -> MeasurementFunctional:
    """The four-leg functional for the geometry's four-frame.

    ``value`` uses the full coefficient ``C beta2^3 + D beta2 beta3 + beta4`` of the frame; ``leading`` and
    ``subleading`` replace it by the combinations extracted from a Laurent fit over a sweep of collapsing frames
    with the same phi.

    Raises:
        InvalidInputError: Without a four-frame.
        RankDeficiencyError: If the Laurent fit fails.
    """
    frame = geometry.frame
    if frame is None or frame.kind != "four" or len(geometry.incoming) != 4:
        raise InvalidInputError("M4 needs a geometry built from a four-frame.")
    beta2, beta3, beta4 = _betas_at(medium, geometry.point)
    coefficients: InteractionCoefficients = interaction_sums(frame, beta2, beta3, beta4)
    transport = _transport_product(geometry, medium, method) * _source_product(source_symbols, 4)
    main, sub, fit = fit_four_frame_coefficient(frame.parameters["phi"], beta2, beta3, beta4, s_values)
    degenerate = abs(main) <= DEGENERATE_TOL * max(1.0, abs(beta2) ** 3 + abs(beta2 * beta3))
    if degenerate:
        module_logger.debug(f"4 beta2^3 - 3 beta2 beta3 vanishes at {geometry.point.tolist()}")
    return MeasurementFunctional(
        kind="M4",
        point=geometry.point,
        value=coefficients.curly_c * transport,
        coefficient=coefficients.curly_c,
        transport=transport,
        frame=frame.as_dict(),
        degenerate=degenerate,
        leading=main * transport,
        subleading=sub * transport,
        fit=fit,
    )


# endregion measurement functionals
# region oracle


class MeasurementOracle:
    """A medium whose coefficients are only reachable through symbol-level measurements.

    The metric is shared knowledge; ``b`` and the betas stay private.
    """

    def __init__(
        self,
        medium: MediumParams,
        source_symbols: Optional[Sequence[float]] = None,
        name: Optional[str] = None,
    ):
        if not isinstance(medium, MediumParams):
            raise TypeError(f"medium must be MediumParams, got {type(medium)!r}")
        self._medium = medium
        self._source_symbols = source_symbols
        self.name = medium.name if name is None else name
        self.calls = 0

    @property
    def metric(self) -> ProductMetric:
        return self._medium.metric

    @property
    def medium_hash(self) -> str:
        return self._medium.medium_hash()

    def m3(self, geometry: ObservationGeometry) -> MeasurementFunctional:
        self.calls += 1
        symbols = None if self._source_symbols is None else self._source_symbols[:3]
        return synthesize_m3(geometry, self._medium, symbols)

    def m4(self, geometry: ObservationGeometry, s_values: Sequence[float] = DEFAULT_S_VALUES) -> MeasurementFunctional:
        self.calls += 1
        symbols = None if self._source_symbols is None else self._source_symbols[:4]
        return synthesize_m4(geometry, self._medium, symbols, s_values)

    def leg_functional(self, path: Bicharacteristic, s: float) -> float:
        """``(2 beta2^2 + beta3)(q)`` times the transport from the interaction point ``path(0)`` to ``path(s)``.

        This is the M3 functional seen from a measurement point sliding along the outgoing ray, up to factors
        that do not depend on s.
        """
        self.calls += 1
        q = path.position(0.0)
        beta2, beta3, _ = _betas_at(self._medium, q)
        return (2.0 * beta2**2 + beta3) * transport_closed_form(path, self._medium.b, 0.0, s)

    def __repr__(self):
        return f"{self.__class__.__name__}(name={self.name!r})"


# endregion oracle

"""Higher-order linearization of the forward problem.

For boundary data ``f = sum_j eps_j f_j`` the solution expands as ``p = sum_j eps_j v_j + sum eps_i eps_j A2^ij +
sum eps_i eps_j eps_k A3^ijk + ...`` where every ``A`` term solves the linear problem with zero boundary data and a
forcing built from lower terms:

    A2^ij   = Q(beta2 d_t^2(v_i v_j))
    A3^ijk  = Q(2 beta2 d_t^2(v_i A2^jk) + beta3 d_t^2(v_i v_j v_k))
    A4^ijkl = Q(2 beta2 d_t^2(v_i A3^jkl) + beta2 d_t^2(A2^ij A2^kl) + 3 beta3 d_t^2(v_i v_j A2^kl)
                + beta4 d_t^2(v_i v_j v_k v_l))

The same products are formed with the solver's discrete time differences, so the cascade is the exact Taylor
expansion of the discrete solution map and agrees with finite differences in eps up to ``O(eps^2)``.
"""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence

import numpy as np

from wavescope.base import DivergenceError, GaugeError, GridError, InvalidInputError, evaluate_scalar
from wavescope.gauge import GaugeFunction, time_power_derivatives
from wavescope.wave_solver import (
    BoundarySource,
    DNTrace,
    Grid,
    MediumParams,
    SourceCombination,
    Wavefield,
    dn_trace,
    first_time_difference,
    march,
    sample_medium,
    second_time_difference,
    solve_linear,
    solve_nonlinear,
)

module_logger = logging.getLogger(__name__)

Target = Literal["field", "dn_trace"]


@dataclass(kw_only=True)
class MultiSource:
    sources: tuple[BoundarySource, ...]
    epsilons: Optional[tuple[float, ...]] = None
    """One step per slot; defaults to ``epsilon`` in every slot."""
    epsilon: float = 1e-3
    allow_high_order: bool = False
    """Permit more than four slots."""

    def __post_init__(self):
        self.sources = tuple(self.sources)
        for source in self.sources:
            if not isinstance(source, BoundarySource):
                raise TypeError(f"Expected BoundarySource objects, got {type(source)!r}")
        J = len(self.sources)
        if J < 2 or (J > 4 and not self.allow_high_order):
            raise InvalidInputError(f"MultiSource needs 2 to 4 sources (or allow_high_order=True), got {J}")
        if self.epsilons is None:
            self.epsilons = (float(self.epsilon),) * J
        self.epsilons = tuple(float(e) for e in self.epsilons)
        if len(self.epsilons) != J:
            raise InvalidInputError(f"Got {len(self.epsilons)} epsilons for {J} sources")
        if any(not e > 0 for e in self.epsilons):
            raise InvalidInputError(f"Epsilons must be positive, got {self.epsilons}")

    @property
    def order(self) -> int:
        return len(self.sources)

    def halved(self) -> MultiSource:
        return replace(self, epsilons=tuple(e / 2 for e in self.epsilons))

    def corners(self) -> list[tuple[float, ...]]:
        """The ``2^J`` points ``(+-eps_1, ..., +-eps_J)`` of the central product stencil."""
        return [
            tuple(sign * e for sign, e in zip(signs, self.epsilons))
            for signs in itertools.product((1.0, -1.0), repeat=self.order)
        ]


# region finite differences


def _stencil(
    params: MediumParams,
    sources: MultiSource,
    grid: Grid,
    target: Target,
    max_workers: Optional[int],
    solver_kwargs: dict,
) -> np.ndarray:
    sm = sample_medium(params, grid)

    def corner_solve(weights: tuple[float, ...]) -> np.ndarray:
        combination = SourceCombination(sources.sources, weights)
        try:
            field = solve_nonlinear(params, combination, grid, sampled=sm, **solver_kwargs)
        except DivergenceError as e:
            raise type(e)(
                f"Solve at epsilon corner {weights} failed: {e}", last_ratio=e.last_ratio, iterations=e.iterations
            ) from e
        module_logger.debug(f"Corner {weights} solved in {field.iterations} iterations")
        return dn_trace(params, field).values if target == "dn_trace" else field.values

    corners = sources.corners()
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        results = list(executor.map(corner_solve, corners))
    total = np.zeros_like(results[0])
    for weights, values in zip(corners, results):
        sign = math.prod(1.0 if w > 0 else -1.0 for w in weights)
        total += sign * values
    return total / (2**sources.order * math.prod(sources.epsilons))


def fd_mixed_derivative(
    params: MediumParams,
    sources: MultiSource,
    grid: Grid,
    target: Target = "field",
    richardson: bool = False,
    max_workers: Optional[int] = None,
    **solver_kwargs,
) -> Wavefield | DNTrace:
    """Mixed derivative ``d_eps1 ... d_epsJ`` of the solution (or its DN trace) at ``eps = 0``.

    Uses the ``2^J``-corner central product stencil divided by ``2^J prod eps_j``; its error is ``O(eps^2)``.
    With ``richardson=True`` the stencil is repeated with halved steps and combined as ``(4 D(eps/2) - D(eps)) / 3``.
    Corner solves run on a thread pool.

    Raises:
        DivergenceError: If any corner solve fails; the message names the corner.
    """
    if target not in ("field", "dn_trace"):
        raise InvalidInputError(f"target must be 'field' or 'dn_trace', got {target!r}")
    values = _stencil(params, sources, grid, target, max_workers, solver_kwargs)
    if richardson:
        finer = _stencil(params, sources.halved(), grid, target, max_workers, solver_kwargs)
        values = (4.0 * finer - values) / 3.0
    if target == "dn_trace":
        return DNTrace(grid=grid, values=values)
    return Wavefield(grid=grid, values=values, medium_hash=params.medium_hash())


# endregion finite differences
# region cascades


@dataclass(kw_only=True)
class CascadeTerms:
    grid: Grid
    kind: Literal["A", "B"] = "A"
    n_sources: int
    second: dict[tuple[int, ...], np.ndarray] = field(default_factory=dict)
    """A2 (or B2) fields keyed by ordered index pairs."""
    third: dict[tuple[int, ...], np.ndarray] = field(default_factory=dict)
    fourth: dict[tuple[int, ...], np.ndarray] = field(default_factory=dict)
    symmetry_defect: float = 0.0
    """``max |A2^ij - A2^ji|`` over all pairs."""
    n_solves: int = 0

    def term(self, *indices: int) -> Wavefield:
        store = {2: self.second, 3: self.third, 4: self.fourth}.get(len(indices))
        if store is None or tuple(indices) not in store:
            raise KeyError(f"No cascade term for indices {indices}")
        return Wavefield(grid=self.grid, values=store[tuple(indices)])

    def interaction(self, order: int, indices: Optional[Sequence[int]] = None) -> Wavefield:
        """Sum of the order-``order`` terms over all orderings of ``indices`` (default: the first ``order`` sources)."""
        store = {2: self.second, 3: self.third, 4: self.fourth}[order]
        indices = tuple(range(order)) if indices is None else tuple(indices)
        total = np.zeros(self.grid.field_shape)
        for permutation in itertools.permutations(indices):
            total += store[permutation]
        return Wavefield(grid=self.grid, values=total)

    def as_dict(self) -> dict:
        return dict(
            kind=self.kind,
            n_sources=self.n_sources,
            second=sorted(self.second),
            third=sorted(self.third),
            fourth=sorted(self.fourth),
            symmetry_defect=self.symmetry_defect,
            n_solves=self.n_solves,
        )


class _Cascade:
    """Interior products, discrete time differences and zero-data solves shared by the cascades."""

    def __init__(self, params: MediumParams, fields: Sequence[Wavefield]):
        if not fields:
            raise InvalidInputError("Need at least one linear field.")
        grid = fields[0].grid
        for f in fields:
            if f.grid != grid:
                raise GridError("All linear fields must live on the same grid.")
        self.grid = grid
        self.sm = sample_medium(params, grid)
        self.interior = (slice(None),) + grid.interior
        self.v = [f.values[self.interior] for f in fields]
        self.n_solves = 0

    def beta(self, order: int) -> Optional[np.ndarray]:
        return self.sm.betas.get(order)

    def dtt(self, q: np.ndarray) -> np.ndarray:
        return second_time_difference(q, self.grid.dt)

    def dt(self, q: np.ndarray) -> np.ndarray:
        return first_time_difference(q, self.grid.dt)

    def solve(self, forcing) -> np.ndarray:
        """Discrete ``Q_bvp``: zero boundary and initial data."""
        full = np.zeros(self.grid.field_shape)
        if isinstance(forcing, np.ndarray):
            full[self.interior] = forcing
        self.n_solves += 1
        return march(self.sm, full)

    def inner(self, values: np.ndarray) -> np.ndarray:
        return values[self.interior]


def _pairs(n: int) -> list[tuple[int, int]]:
    return list(itertools.product(range(n), repeat=2))


def _second_order(cascade: _Cascade, n: int) -> dict[tuple[int, ...], np.ndarray]:
    beta2 = cascade.beta(2)
    second: dict[tuple[int, ...], np.ndarray] = {}
    for i, j in _pairs(n):
        if (j, i) in second:
            second[(i, j)] = second[(j, i)]
            continue
        forcing = 0.0 if beta2 is None else beta2 * cascade.dtt(cascade.v[i] * cascade.v[j])
        second[(i, j)] = cascade.solve(forcing)
    return second


def _third_order_forcing(cascade: _Cascade, i: int, j: int, k: int, second) -> np.ndarray | float:
    beta2, beta3 = cascade.beta(2), cascade.beta(3)
    v = cascade.v
    forcing = 0.0
    if beta2 is not None:
        forcing = forcing + 2.0 * beta2 * cascade.dtt(v[i] * cascade.inner(second[(j, k)]))
    if beta3 is not None:
        forcing = forcing + beta3 * cascade.dtt(v[i] * v[j] * v[k])
    return forcing


def _third_order(cascade: _Cascade, n: int, second, forcing_fn=None) -> dict[tuple[int, ...], np.ndarray]:
    forcing_fn = forcing_fn or (lambda i, j, k: _third_order_forcing(cascade, i, j, k, second))
    third: dict[tuple[int, ...], np.ndarray] = {}
    for i, j, k in itertools.product(range(n), repeat=3):
        if (i, k, j) in third:
            third[(i, j, k)] = third[(i, k, j)]
            continue
        third[(i, j, k)] = cascade.solve(forcing_fn(i, j, k))
    return third


def _fourth_order(cascade: _Cascade, n: int, second, third) -> dict[tuple[int, ...], np.ndarray]:
    beta2, beta3, beta4 = cascade.beta(2), cascade.beta(3), cascade.beta(4)
    v = cascade.v
    inner = cascade.inner
    fourth: dict[tuple[int, ...], np.ndarray] = {}
    for i, j, k, l in itertools.permutations(range(n), 4):
        if (i, j, l, k) in fourth:
            fourth[(i, j, k, l)] = fourth[(i, j, l, k)]
            continue
        forcing = 0.0
        if beta2 is not None:
            forcing = forcing + 2.0 * beta2 * cascade.dtt(v[i] * inner(third[(j, k, l)]))
            forcing = forcing + beta2 * cascade.dtt(inner(second[(i, j)]) * inner(second[(k, l)]))
        if beta3 is not None:
            forcing = forcing + 3.0 * beta3 * cascade.dtt(v[i] * v[j] * inner(second[(k, l)]))
        if beta4 is not None:
            forcing = forcing + beta4 * cascade.dtt(v[i] * v[j] * v[k] * v[l])
        fourth[(i, j, k, l)] = cascade.solve(forcing)
    return fourth


def _symmetry_defect(second: dict) -> float:
    return max((float(np.max(np.abs(second[(i, j)] - second[(j, i)]))) for i, j in second), default=0.0)


def cascade_terms(
    params: MediumParams,
    fields: Sequence[Wavefield],
    max_order: Optional[int] = None,
) -> CascadeTerms:
    """Second, third and fourth order terms of the expansion around ``p = 0``.

    Second and third order terms are computed for every index combination, fourth order terms for the orderings of
    distinct indices (all that the fourth order interaction needs).

    Args:
        params: The medium; only its linear part enters the solves.
        fields: Solutions ``v_j`` of the linear problem with the individual sources.
        max_order: Highest order computed; defaults to ``min(len(fields), 4)``.

    Raises:
        GridError: If the fields live on different grids.
    """
    n = len(fields)
    max_order = min(n, 4) if max_order is None else max_order
    if not 2 <= max_order <= 4:
        raise InvalidInputError(f"max_order must be 2, 3 or 4, got {max_order}")
    cascade = _Cascade(params, fields)
    second = _second_order(cascade, n)
    third = _third_order(cascade, n, second) if max_order >= 3 else {}
    fourth = _fourth_order(cascade, n, second, third) if max_order >= 4 and n >= 4 else {}
    module_logger.info(f"Cascade up to order {max_order} for {n} sources: {cascade.n_solves} linear solves")
    return CascadeTerms(
        grid=cascade.grid,
        kind="A",
        n_sources=n,
        second=second,
        third=third,
        fourth=fourth,
        symmetry_defect=_symmetry_defect(second),
        n_solves=cascade.n_solves,
    )


def damping_coefficients(
    params: MediumParams, rho: GaugeFunction, grid: Grid, order: int
) -> tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """``c_k = 2 beta_k d_t(rho^k) / rho`` and ``d_k = beta_k d_t^2(rho^k) / rho`` on interior nodes, or Nones."""
    beta = params.beta(order)
    if beta is None or not rho.time_dependent:
        return None, None
    t, x = grid.spacetime_mesh()
    interior = (slice(None),) + grid.interior
    r = rho(t, x)
    first, second = time_power_derivatives(rho, order, t, x)
    b = evaluate_scalar(beta, t, x)
    return (2.0 * b * first / r)[interior], (b * second / r)[interior]


def cascade_modified(
    params: MediumParams,
    rho: GaugeFunction,
    fields: Sequence[Wavefield],
) -> CascadeTerms:
    """Second and third order terms for the nonlinearity ``sum_k beta_k d_t^2(p^k) + c_k d_t(p^k) + d_k p^k``
    that a time-dependent gauge produces:

        B2^ij  = A2^ij + Q(c2 d_t(v_i v_j) + d2 v_i v_j)
        B3^ijk = Q(2 beta2 d_t^2(v_i B2^jk) + beta3 d_t^2(v_i v_j v_k) + 2 c2 d_t(v_i B2^jk) + 2 d2 v_i B2^jk
                   + c3 d_t(v_i v_j v_k) + d3 v_i v_j v_k)

    For a time-independent rho the result equals :func:`cascade_terms` bit for bit.

    Raises:
        GaugeError: If rho vanishes on the grid or differs from 1 on its boundary.
    """
    cascade = _Cascade(params, fields)
    grid = cascade.grid
    rho.certify(grid.bounds, times=grid.times[:: max(grid.nt // 4, 1)])
    t, x = grid.spacetime_mesh()
    if np.any(rho(t, x) == 0.0) or not np.all(np.isfinite(rho(t, x))):
        raise GaugeError(f"Gauge {rho.name!r} vanishes on the grid")
    n = len(fields)
    c2, d2 = damping_coefficients(params, rho, grid, 2)
    c3, d3 = damping_coefficients(params, rho, grid, 3)
    v = cascade.v

    second = _second_order(cascade, n)
    if c2 is not None:
        for i, j in _pairs(n):
            if i > j:
                second[(i, j)] = second[(j, i)]
                continue
            product = v[i] * v[j]
            second[(i, j)] = second[(i, j)] + cascade.solve(c2 * cascade.dt(product) + d2 * product)

    def forcing(i, j, k):
        total = _third_order_forcing(cascade, i, j, k, second)
        if c2 is not None:
            product = v[i] * cascade.inner(second[(j, k)])
            total = total + 2.0 * c2 * cascade.dt(product) + 2.0 * d2 * product
        if c3 is not None:
            cubic = v[i] * v[j] * v[k]
            total = total + c3 * cascade.dt(cubic) + d3 * cubic
        return total

    third = _third_order(cascade, n, second, forcing) if n >= 3 else {}
    return CascadeTerms(
        grid=grid,
        kind="B",
        n_sources=n,
        second=second,
        third=third,
        symmetry_defect=_symmetry_defect(second),
        n_solves=cascade.n_solves,
    )


# endregion cascades
# region multi-wave assembly


@dataclass(kw_only=True)
class MultiWave:
    linear: list[Wavefield]
    terms: CascadeTerms
    interactions: dict[int, Wavefield]
    """``U_J`` fields keyed by order J."""
    traces: dict[int, DNTrace]
    """DN traces of the ``U_J`` fields."""

    def as_dict(self) -> dict:
        return dict(
            terms=self.terms.as_dict(),
            interactions={k: u.max_abs() for k, u in self.interactions.items()},
            trace_norms={k: tr.l2_norm() for k, tr in self.traces.items()},
        )


def solve_sources(params: MediumParams, sources: Sequence[BoundarySource], grid: Grid) -> list[Wavefield]:
    """Linear fields ``v_j`` for each source."""
    linear = params.linear_part()
    sm = sample_medium(linear, grid)
    return [solve_linear(linear, source, grid, sampled=sm) for source in sources]


def assemble_multi_wave(
    params: MediumParams,
    sources: MultiSource | Sequence[BoundarySource],
    grid: Grid,
) -> MultiWave:
    """The interaction fields ``U3`` (and ``U4`` with four sources) with their DN traces.

    ``U_J`` is the sum of the order-J cascade terms over all orderings of the J sources; its DN trace
    ``d_nu U_J + b(nu) U_J / 2`` equals the J-th mixed eps-derivative of the DN map.
    """
    if isinstance(sources, MultiSource):
        sources = sources.sources
    sources = tuple(sources)
    if len(sources) not in (3, 4):
        raise InvalidInputError(f"Multi-wave assembly needs 3 or 4 sources, got {len(sources)}")
    linear = solve_sources(params, sources, grid)
    terms = cascade_terms(params, linear)
    interactions = {order: terms.interaction(order) for order in range(3, len(sources) + 1)}
    interactions[2] = terms.interaction(2)
    traces = {order: dn_trace(params, u) for order, u in interactions.items()}
    return MultiWave(linear=linear, terms=terms, interactions=interactions, traces=traces)


# endregion multi-wave assembly

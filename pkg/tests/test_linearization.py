import numpy as np
import pytest

from wavescope.base import GaugeError, InvalidInputError, constant_field
from wavescope.gauge import GaugeFunction
from wavescope.linearization import (
    MultiSource,
    assemble_multi_wave,
    cascade_modified,
    cascade_terms,
    fd_mixed_derivative,
    solve_sources,
)
from wavescope.wave_solver import BoundarySource, Grid, MediumParams, dn_trace


@pytest.fixture(scope="module")
def crossing_sources():
    return (
        BoundarySource.pulse(amplitude=1.0, start=0.0, duration=0.3),
        BoundarySource.pulse(amplitude=1.0, start=0.05, duration=0.3, nodes=(1,)),
        BoundarySource.pulse(amplitude=1.0, start=0.1, duration=0.25),
    )


@pytest.fixture(scope="module")
def cubic_medium_1d(minkowski_1d):
    return MediumParams(metric=minkowski_1d, betas=(constant_field(0.5), constant_field(0.3)))


@pytest.fixture(scope="module")
def quartic_medium_1d(minkowski_1d):
    return MediumParams(
        metric=minkowski_1d, betas=(constant_field(0.5), constant_field(0.3), constant_field(0.2)), name="quartic"
    )


@pytest.fixture(scope="module")
def four_sources(crossing_sources):
    return crossing_sources + (BoundarySource.pulse(amplitude=1.0, start=0.15, duration=0.3, nodes=(1,)),)


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def test_multisource_validation(crossing_sources):
    with pytest.raises(InvalidInputError):
        MultiSource(sources=crossing_sources[:1])
    with pytest.raises(InvalidInputError):
        MultiSource(sources=crossing_sources + crossing_sources[:2])
    with pytest.raises(InvalidInputError):
        MultiSource(sources=crossing_sources[:2], epsilons=(1e-2, -1e-2))
    with pytest.raises(TypeError):
        MultiSource(sources=(crossing_sources[0], "pulse"))
    sources = MultiSource(sources=crossing_sources, epsilon=1e-2)
    assert sources.epsilons == (1e-2,) * 3
    assert len(sources.corners()) == 8
    assert sources.halved().epsilons == (5e-3,) * 3


def test_linear_medium_has_no_mixed_derivative(linear_medium_1d, grid_1d, crossing_sources):
    sources = MultiSource(sources=crossing_sources[:2], epsilon=1e-2)
    derivative = fd_mixed_derivative(linear_medium_1d, sources, grid_1d)
    assert derivative.max_abs() < 1e-9


def test_second_derivative_matches_cascade(quadratic_medium_1d, grid_1d, crossing_sources):
    fields = solve_sources(quadratic_medium_1d, crossing_sources[:2], grid_1d)
    expected = cascade_terms(quadratic_medium_1d, fields).interaction(2).values
    errors = []
    for epsilon in (1e-2, 5e-3):
        sources = MultiSource(sources=crossing_sources[:2], epsilon=epsilon)
        errors.append(_relative(fd_mixed_derivative(quadratic_medium_1d, sources, grid_1d).values, expected))
    assert errors[1] < 1e-2
    assert 3.0 <= errors[0] / errors[1] <= 5.0


@pytest.mark.parametrize("order", [3, pytest.param(4, marks=pytest.mark.slow)])
def test_higher_mixed_derivatives_converge_in_epsilon(order, quartic_medium_1d, grid_1d, four_sources):
    fields = solve_sources(quartic_medium_1d, four_sources[:order], grid_1d)
    expected = cascade_terms(quartic_medium_1d, fields).interaction(order).values
    errors = []
    for epsilon in (2e-3, 1e-3):
        sources = MultiSource(sources=four_sources[:order], epsilon=epsilon)
        errors.append(_relative(fd_mixed_derivative(quartic_medium_1d, sources, grid_1d).values, expected))
    assert 3.0 <= errors[0] / errors[1] <= 5.0


def test_richardson_improves_the_stencil(quadratic_medium_1d, grid_1d, crossing_sources):
    fields = solve_sources(quadratic_medium_1d, crossing_sources[:2], grid_1d)
    expected = cascade_terms(quadratic_medium_1d, fields).interaction(2).values
    sources = MultiSource(sources=crossing_sources[:2], epsilon=2e-2)
    plain = _relative(fd_mixed_derivative(quadratic_medium_1d, sources, grid_1d).values, expected)
    extrapolated = _relative(
        fd_mixed_derivative(quadratic_medium_1d, sources, grid_1d, richardson=True).values, expected
    )
    assert extrapolated < plain / 3


def test_fd_target_rejects_unknown(quadratic_medium_1d, grid_1d, crossing_sources):
    with pytest.raises(InvalidInputError):
        fd_mixed_derivative(quadratic_medium_1d, MultiSource(sources=crossing_sources[:2]), grid_1d, target="energy")


def test_cascade_of_linear_medium_vanishes(linear_medium_1d, grid_1d, crossing_sources):
    fields = solve_sources(linear_medium_1d, crossing_sources, grid_1d)
    terms = cascade_terms(linear_medium_1d, fields)
    assert all(not np.any(values) for values in terms.second.values())
    assert all(not np.any(values) for values in terms.third.values())
    assert terms.fourth == {}


def test_cascade_bookkeeping(cubic_medium_1d, grid_1d, crossing_sources):
    fields = solve_sources(cubic_medium_1d, crossing_sources, grid_1d)
    terms = cascade_terms(cubic_medium_1d, fields)
    assert terms.kind == "A"
    assert terms.symmetry_defect == 0.0
    # 6 distinct pairs and 3 * 6 third order terms symmetric in the last two indices
    assert terms.n_solves == 24
    assert np.array_equal(terms.term(0, 1, 2).values, terms.term(0, 2, 1).values)
    with pytest.raises(KeyError):
        terms.term(0, 1, 2, 3)
    with pytest.raises(InvalidInputError):
        cascade_terms(cubic_medium_1d, fields, max_order=5)


def test_third_order_dn_trace_matches_finite_differences(cubic_medium_1d, minkowski_1d, crossing_sources):
    # the waves meet mid-domain around t = 0.5; the interaction reaches the ends after t = 1
    grid = Grid.for_metric(minkowski_1d, 100, 1.6, cfl=0.5)
    wave = assemble_multi_wave(cubic_medium_1d, crossing_sources, grid)
    assert set(wave.interactions) == {2, 3}
    assert wave.traces[3].max_abs() > 1e-6
    sources = MultiSource(sources=crossing_sources, epsilon=1e-2)
    fd = fd_mixed_derivative(cubic_medium_1d, sources, grid, target="dn_trace")
    assert _relative(fd.values, wave.traces[3].values) < 5e-2
    assert np.allclose(wave.traces[3].values, dn_trace(cubic_medium_1d, wave.interactions[3]).values)


def test_assembly_needs_three_or_four_sources(cubic_medium_1d, grid_1d, crossing_sources):
    with pytest.raises(InvalidInputError):
        assemble_multi_wave(cubic_medium_1d, crossing_sources[:2], grid_1d)


def test_modified_cascade_reduces_for_static_gauge(cubic_medium_1d, grid_1d, crossing_sources):
    fields = solve_sources(cubic_medium_1d, crossing_sources, grid_1d)
    plain = cascade_terms(cubic_medium_1d, fields, max_order=3)
    modified = cascade_modified(cubic_medium_1d, GaugeFunction.sinusoidal(0.1), fields)
    assert modified.kind == "B"
    for key, values in plain.second.items():
        assert np.array_equal(modified.second[key], values)
    for key, values in plain.third.items():
        assert np.array_equal(modified.third[key], values)


def test_modified_cascade_for_time_dependent_gauge(cubic_medium_1d, grid_1d, crossing_sources):
    fields = solve_sources(cubic_medium_1d, crossing_sources, grid_1d)
    plain = cascade_terms(cubic_medium_1d, fields, max_order=3)
    rho = GaugeFunction.time_bump(amplitude=0.5, duration=grid_1d.duration)
    modified = cascade_modified(cubic_medium_1d, rho, fields)
    assert modified.symmetry_defect == 0.0
    assert not np.array_equal(modified.second[(0, 1)], plain.second[(0, 1)])
    assert np.array_equal(modified.second[(0, 1)], modified.second[(1, 0)])


def test_modified_cascade_needs_a_boundary_unit_gauge(cubic_medium_1d, grid_1d, crossing_sources):
    fields = solve_sources(cubic_medium_1d, crossing_sources[:2], grid_1d)
    tilted = GaugeFunction(value=lambda t, x: 1.0 + 0.1 * x[..., 0], name="tilted")
    with pytest.raises(GaugeError):
        cascade_modified(cubic_medium_1d, tilted, fields)

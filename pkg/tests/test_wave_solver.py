import math

import numpy as np
import pytest

from wavescope.base import (
    CFLViolationError,
    DivergenceError,
    GridError,
    InvalidInputError,
    SmallDataViolationError,
    UnsupportedConfigurationError,
    constant_field,
    constant_one_form,
)
from wavescope.lorentz_geometry import ProductMetric
from wavescope.wave_solver import (
    BoundarySource,
    Grid,
    MediumParams,
    SourceCombination,
    Wavefield,
    apply_box_g,
    convergence_order,
    discrete_residual,
    dn_trace,
    probe_small_data_threshold,
    solve_linear,
    solve_nonlinear,
)


def unit_grid(cells, duration=0.8, cfl=0.5):
    return Grid.build(cells, duration, cfl=cfl)


def test_grid_geometry():
    grid = unit_grid(100)
    assert grid.dx == (0.01,)
    assert grid.nt == 160
    assert grid.dt == pytest.approx(0.005)
    assert grid.field_shape == (161, 101)
    assert grid.boundary_mask.sum() == 2
    assert grid.refine().cells == (200,)
    assert grid.refine().nt == 320


def test_grid_validation():
    with pytest.raises(GridError):
        Grid(cells=(1,), nt=10, duration=1.0)
    with pytest.raises(UnsupportedConfigurationError):
        Grid(cells=(4, 4, 4), nt=10, duration=1.0)


def test_box_g_of_quadratic_in_time(minkowski_1d):
    grid = unit_grid(20)
    result = apply_box_g(minkowski_1d, lambda t, x: np.asarray(t) ** 2 + 0 * x[..., 0], grid)
    assert np.allclose(result, 2.0, rtol=0, atol=1e-9)


def test_box_g_of_null_solution(minkowski_1d):
    errors = []
    for cells in (40, 80):
        grid = unit_grid(cells)
        errors.append(np.max(np.abs(apply_box_g(minkowski_1d, lambda t, x: np.sin(t - x[..., 0]), grid))))
    assert errors[1] < errors[0] / 3
    assert errors[1] < 1e-3


def test_box_g_rejects_bad_shape(minkowski_1d):
    with pytest.raises(GridError):
        apply_box_g(minkowski_1d, np.zeros((3, 3)), unit_grid(10))


def test_zero_data_gives_zero_field(linear_medium_1d, grid_1d):
    field = solve_linear(linear_medium_1d, None, grid_1d)
    assert field.max_abs() == 0.0
    nonlinear = solve_nonlinear(
        MediumParams(metric=linear_medium_1d.metric, betas=(constant_field(0.5),)), None, grid_1d
    )
    assert nonlinear.max_abs() == 0.0
    assert nonlinear.iterations == 1


def test_dalembert_transport(linear_medium_1d):
    source = BoundarySource.pulse(amplitude=1.0, duration=0.4)

    def exact(grid):
        t, x = grid.spacetime_mesh()
        return source(t - x[..., 0])

    grids = [unit_grid(n) for n in (100, 200, 400)]
    study = convergence_order(lambda grid: solve_linear(linear_medium_1d, source, grid), grids, exact=exact)
    assert study.reliable
    assert study.order == pytest.approx(2.0, abs=0.1)
    assert study.errors[-1] < 1e-2


def test_convergence_order_needs_three_grids(linear_medium_1d, pulse):
    with pytest.raises(InvalidInputError):
        convergence_order(lambda grid: solve_linear(linear_medium_1d, pulse, grid), [unit_grid(50), unit_grid(100)])


def test_damped_pulse_decay(minkowski_1d):
    b0 = 0.2
    medium = MediumParams(metric=minkowski_1d, b=constant_one_form([b0, 0.0]))
    grid = unit_grid(200)
    field = solve_linear(medium, BoundarySource.pulse(amplitude=1.0, duration=0.4), grid)
    peak_entry = np.max(np.abs(field.values[:, 0]))
    peak_mid = np.max(np.abs(field.values[:, 100]))
    assert peak_mid / peak_entry == pytest.approx(math.exp(-b0 * 0.5 / 2), rel=1e-2)


def test_causality(linear_medium_1d, grid_1d):
    source = BoundarySource.pulse(amplitude=1.0, start=0.1, duration=0.3)
    field = solve_linear(linear_medium_1d, source, grid_1d)
    t, x = grid_1d.spacetime_mesh()
    ahead = x[..., 0] > np.maximum(t - 0.1, 0.0) + 0.1
    assert np.max(np.abs(field.values[np.broadcast_to(ahead, field.values.shape)])) <= 1e-4 * field.max_abs()


def test_cfl_violation(linear_medium_1d, pulse):
    grid = Grid(cells=(100,), nt=20, duration=0.8)
    with pytest.raises(CFLViolationError) as excinfo:
        solve_linear(linear_medium_1d, pulse, grid)
    assert excinfo.value.suggested_dt < grid.dt


def test_solve_linear_rejects_nonlinear_media(quadratic_medium_1d, grid_1d, pulse):
    with pytest.raises(InvalidInputError):
        solve_linear(quadratic_medium_1d, pulse, grid_1d)


def test_nonlinear_small_data(quadratic_medium_1d, grid_1d, pulse):
    field = solve_nonlinear(quadratic_medium_1d, pulse, grid_1d)
    assert max(field.contraction_ratios) < 0.1
    assert field.residual < 1e-10
    half = solve_nonlinear(quadratic_medium_1d, pulse.scaled(0.5), grid_1d)
    assert field.l2_norm() / half.l2_norm() == pytest.approx(2.0, rel=1e-2)


def test_nonlinear_residual_matches_discrete_equation(quadratic_medium_1d, grid_1d, pulse):
    field = solve_nonlinear(quadratic_medium_1d, pulse, grid_1d)
    assert np.max(np.abs(discrete_residual(quadratic_medium_1d, field))) == pytest.approx(field.residual)


def test_small_data_threshold(quadratic_medium_1d, grid_1d, pulse):
    probe = probe_small_data_threshold(
        quadratic_medium_1d, pulse, grid_1d, amplitudes=[1e-3, 2e-3, 4e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 5.0]
    )
    assert probe.threshold is not None and probe.threshold < 5.0
    assert probe.converged[:3] == [True, True, True]
    assert probe.converged[-1] is False
    assert all(ratio < 0.5 for ratio in probe.max_ratios[:3] if ratio is not None)
    gains = probe.gains[:3]
    assert max(gains) / min(gains) < 1.02


def test_large_data_raises(quadratic_medium_1d, grid_1d, pulse):
    with pytest.raises(DivergenceError):
        solve_nonlinear(quadratic_medium_1d, pulse.scaled(2000.0), grid_1d)
    with pytest.raises(SmallDataViolationError):
        solve_nonlinear(quadratic_medium_1d, pulse.scaled(2000.0), grid_1d)


def test_manufactured_nonlinear_solution(minkowski_1d):
    beta2, amplitude = 0.5, 0.1
    medium = MediumParams(metric=minkowski_1d, betas=(constant_field(beta2),))

    def exact_fn(t, x):
        return amplitude * np.asarray(t) ** 4 * np.sin(np.pi * x[..., 0])

    def forcing(t, x):
        t = np.asarray(t)
        s = np.sin(np.pi * x[..., 0])
        return 12 * amplitude * t**2 * s + np.pi**2 * amplitude * t**4 * s - beta2 * 56 * amplitude**2 * t**6 * s**2

    def exact(grid):
        t, x = grid.spacetime_mesh()
        return exact_fn(t, x)

    grids = [unit_grid(n) for n in (20, 40, 80)]
    study = convergence_order(lambda grid: solve_nonlinear(medium, None, grid, forcing=forcing), grids, exact=exact)
    assert study.order == pytest.approx(2.0, abs=0.2)


@pytest.mark.slow
def test_variable_speed_self_convergence():
    lens = ProductMetric.gaussian(amplitude=0.3, dim=1, width=0.3, center=(0.5,), bounds=((0.0, 1.0),))
    medium = MediumParams(metric=lens)
    source = BoundarySource.pulse(amplitude=1.0, duration=0.4)
    grids = [Grid.for_metric(lens, n, 0.8) for n in (50, 100, 200, 400)]
    study = convergence_order(lambda grid: solve_linear(medium, source, grid), grids)
    assert 1.8 <= study.order <= 2.5


def test_dn_trace_of_outgoing_pulse(linear_medium_1d):
    source = BoundarySource.pulse(amplitude=1.0, duration=0.4)
    errors = []
    for cells in (100, 200):
        grid = unit_grid(cells)
        trace = dn_trace(linear_medium_1d, solve_linear(linear_medium_1d, source, grid))
        errors.append(np.max(np.abs(trace.values[:, 0] - source.derivative(grid.times))))
    scale = np.max(np.abs(source.derivative(unit_grid(200).times)))
    assert errors[1] < 1e-2 * scale
    assert errors[1] < errors[0] / 3


def test_dn_trace_of_zero_field(linear_medium_1d, grid_1d):
    trace = dn_trace(linear_medium_1d, Wavefield.zeros(grid_1d))
    assert trace.max_abs() == 0.0
    assert trace.values.shape == (grid_1d.nt + 1, 2)


def test_dn_trace_includes_one_form_term(minkowski_1d, grid_1d, pulse):
    plain = MediumParams(metric=minkowski_1d)
    drifting = MediumParams(metric=minkowski_1d, b=constant_one_form([0.0, 0.3]))
    field = solve_linear(drifting, pulse, grid_1d)
    difference = dn_trace(drifting, field).values - dn_trace(plain, field).values
    expected = 0.5 * 0.3 * np.stack([-field.values[:, 0], field.values[:, -1]], axis=1)
    assert np.allclose(difference, expected, rtol=0, atol=1e-15)


def test_dn_trace_csv(linear_medium_1d, grid_1d, pulse, tmp_path):
    trace = dn_trace(linear_medium_1d, solve_linear(linear_medium_1d, pulse, grid_1d))
    n_rows = trace.to_csv(tmp_path / "dn.csv")
    lines = (tmp_path / "dn.csv").read_text().splitlines()
    assert lines[0] == "t,boundary_index,value"
    assert n_rows == len(lines) - 1 == (grid_1d.nt + 1) * 2


def test_wavefield_binary_dump(linear_medium_1d, grid_1d, pulse, tmp_path):
    field = solve_linear(linear_medium_1d, pulse, grid_1d)
    data_path, header_path = field.to_binary(tmp_path / "field")
    values = np.fromfile(data_path, dtype="<f8").reshape(grid_1d.field_shape)
    assert np.array_equal(values, field.values)
    assert header_path.exists()


def test_source_combination_is_linear(linear_medium_1d, grid_1d):
    a = BoundarySource.pulse(amplitude=1.0, start=0.0, duration=0.3)
    b = BoundarySource.pulse(amplitude=1.0, start=0.1, duration=0.3, nodes=(1,))
    combined = solve_linear(linear_medium_1d, SourceCombination((a, b), (2.0, -1.0)), grid_1d)
    separate = (
        2.0 * solve_linear(linear_medium_1d, a, grid_1d).values - solve_linear(linear_medium_1d, b, grid_1d).values
    )
    assert np.allclose(combined.values, separate, rtol=0, atol=1e-14)


def test_source_rejects_missing_node(grid_1d):
    with pytest.raises(GridError):
        BoundarySource.pulse(nodes=(5,)).sample(grid_1d)


def test_medium_hash(minkowski_1d):
    first = MediumParams(metric=minkowski_1d, betas=(constant_field(0.5),), description={"beta2": 0.5})
    second = MediumParams(metric=minkowski_1d, betas=(constant_field(0.5),), description={"beta2": 0.5})
    other = MediumParams(metric=minkowski_1d, betas=(constant_field(0.4),), description={"beta2": 0.4})
    assert first.medium_hash() == second.medium_hash() != other.medium_hash()
    assert first.orders == [2]
    assert first.linear_part().is_linear

import math

import numpy as np
import pytest

from wavescope.base import GaugeError, constant_one_form, evaluate_one_form, evaluate_scalar
from wavescope.gauge import (
    GaugeFunction,
    apply_gauge,
    dn_discrepancy,
    gauge_solution_transform,
    discrete_gauge_potential,
    pairing,
    perturb_potential,
    sample_gauged_medium,
    time_power_derivatives,
)
from wavescope.wave_solver import Grid, MediumParams, discrete_residual, sample_medium, solve_nonlinear

T = np.array([0.0, 0.3, 0.6])[:, None]
X = np.linspace(0.05, 0.95, 7)[None, :, None]


def test_identity_gauge_returns_the_medium(quadratic_medium_1d):
    assert apply_gauge(quadratic_medium_1d, GaugeFunction.identity()) is quadratic_medium_1d


def test_sinusoidal_gauge_coefficients(quadratic_medium_1d):
    amplitude = 0.1
    gauged = apply_gauge(quadratic_medium_1d, GaugeFunction.sinusoidal(amplitude))
    x = X[..., 0]
    rho = 1 + amplitude * np.sin(math.pi * x)
    b = evaluate_one_form(gauged.b, T, X)
    assert np.allclose(b[..., 0], 0.0)
    assert np.allclose(b[..., 1], 2 * amplitude * math.pi * np.cos(math.pi * x) / rho, rtol=0, atol=1e-14)
    h = evaluate_scalar(gauged.h, T, X)
    assert np.allclose(h, amplitude * math.pi**2 * np.sin(math.pi * x) / rho, rtol=0, atol=1e-13)
    beta2 = evaluate_scalar(gauged.betas[0], T, X)
    assert np.allclose(beta2, 0.5 * rho, rtol=0, atol=1e-15)
    assert gauged.medium_hash() != quadratic_medium_1d.medium_hash()


def test_gauge_then_inverse_restores_coefficients(minkowski_1d):
    medium = MediumParams(metric=minkowski_1d, b=constant_one_form([0.2, 0.1]))
    rho = GaugeFunction.sinusoidal(0.3)
    restored = apply_gauge(apply_gauge(medium, rho), rho.inverse())
    assert np.allclose(evaluate_one_form(restored.b, T, X), evaluate_one_form(medium.b, T, X), rtol=0, atol=1e-12)
    assert np.allclose(evaluate_scalar(restored.h, T, X), 0.0, rtol=0, atol=1e-12)


def test_time_dependent_gauge_needs_lax_mode(quadratic_medium_1d):
    rho = GaugeFunction.time_bump(amplitude=0.2, duration=1.0)
    with pytest.raises(GaugeError):
        apply_gauge(quadratic_medium_1d, rho)
    gauged = apply_gauge(quadratic_medium_1d, rho, strict=False)
    b = evaluate_one_form(gauged.b, T, X)
    expected = 2 * rho.dt(T, X[..., 0:1]) / rho(T, X[..., 0:1])
    assert np.allclose(b[..., 0], expected, rtol=0, atol=1e-14)


def test_product_and_inverse():
    rho = GaugeFunction.sinusoidal(0.2)
    one = rho * rho.inverse()
    assert np.allclose(one(T, X), 1.0)
    assert np.allclose(one.grad(T, X), 0.0, atol=1e-14)
    assert np.allclose(one.flat_laplacian(T, X), 0.0, atol=1e-12)
    assert rho * GaugeFunction.identity() is rho


def test_finite_difference_fallback_matches_analytic():
    analytic = GaugeFunction.sinusoidal(0.2)
    numeric = GaugeFunction(value=analytic.value)
    assert np.allclose(numeric.grad(T, X), analytic.grad(T, X), rtol=0, atol=1e-7)
    assert np.allclose(numeric.flat_laplacian(T, X), analytic.flat_laplacian(T, X), rtol=0, atol=1e-5)


def test_time_power_derivatives():
    rho = GaugeFunction.time_bump(amplitude=0.4, duration=1.0)
    t, x, step = 0.3, np.array([0.4]), 1e-4
    first, second = time_power_derivatives(rho, 3, t, x)
    cube = [float(rho(t + k * step, x)) ** 3 for k in (-1, 0, 1)]
    assert float(first) == pytest.approx((cube[2] - cube[0]) / (2 * step), rel=1e-6)
    assert float(second) == pytest.approx((cube[2] - 2 * cube[1] + cube[0]) / step**2, rel=1e-4)


def test_certify():
    bounds = ((0.0, 1.0), (0.0, 2.0))
    assert GaugeFunction.sinusoidal(0.1, dim=2, bounds=bounds).certify(bounds) == pytest.approx(1.0)
    rho = GaugeFunction.time_bump(amplitude=-0.5, duration=1.0, dim=2, bounds=bounds)
    assert rho.certify(bounds, times=(0.0, 0.5, 1.0)) == pytest.approx(0.875)
    with pytest.raises(GaugeError):
        GaugeFunction(value=lambda t, x: 2.0 + 0 * x[..., 0]).certify(((0.0, 1.0),))
    with pytest.raises(GaugeError):
        GaugeFunction.sinusoidal(1.0)


def test_pairing_sign_convention(minkowski_1d):
    a = np.array([1.0, 2.0])
    assert pairing(minkowski_1d, np.array([0.5]), a, a) == pytest.approx(-3.0)


def test_solution_transform_keeps_boundary_values(quadratic_medium_1d, pulse):
    rho = GaugeFunction.sinusoidal(0.2)
    for cells in (100, 200):
        grid = Grid.build(cells, 0.8, cfl=0.5)
        field = solve_nonlinear(quadratic_medium_1d, pulse, grid)
        transformed = gauge_solution_transform(field, rho, quadratic_medium_1d)
        assert np.allclose(transformed.values[:, [0, -1]], field.values[:, [0, -1]], rtol=0, atol=1e-15)
        assert transformed.medium_hash == apply_gauge(quadratic_medium_1d, rho).medium_hash()
        assert transformed.reference_residual is not None
        assert transformed.residual_ratio <= 10


def test_time_dependent_transform_reports_a_large_residual(quadratic_medium_1d, pulse, caplog):
    grid = Grid.build(60, 0.8, cfl=0.5)
    field = solve_nonlinear(quadratic_medium_1d, pulse, grid)
    rho = GaugeFunction.time_bump(amplitude=0.5, duration=0.8)
    with caplog.at_level("WARNING", logger="wavescope.gauge"):
        transformed = gauge_solution_transform(field, rho, quadratic_medium_1d, strict=False)
    assert transformed.residual_ratio > 10
    assert "residual" in caplog.text


def test_gauged_sampling_commutes_with_the_gauge(quadratic_medium_1d, pulse):
    grid = Grid.build(60, 0.8, cfl=0.5)
    rho = GaugeFunction.sinusoidal(0.1)
    field = solve_nonlinear(quadratic_medium_1d, pulse, grid)
    t, x = grid.spacetime_mesh()
    rho_values = rho(t, x)
    sampled = sample_gauged_medium(quadratic_medium_1d, rho, grid)
    gauged = apply_gauge(quadratic_medium_1d, rho)
    original = discrete_residual(quadratic_medium_1d, field)
    transformed = discrete_residual(gauged, field.values / rho_values, grid, sampled=sampled)
    rescaled = transformed * rho_values[(slice(None, -1),) + grid.interior]
    assert np.allclose(rescaled, original, rtol=0, atol=1e-11)


def test_discrete_potential_approaches_the_analytic_one(quadratic_medium_1d):
    rho = GaugeFunction.sinusoidal(0.1)
    errors = []
    for cells in (20, 40):
        grid = Grid.build(cells, 0.4, cfl=0.5)
        discrete = discrete_gauge_potential(quadratic_medium_1d, rho, grid)
        analytic = sample_medium(apply_gauge(quadratic_medium_1d, rho), grid).h
        assert discrete.shape == analytic.shape
        errors.append(np.max(np.abs(discrete - analytic)))
    assert 0 < errors[1] < errors[0] / 3.5


def test_perturbed_potential(quadratic_medium_1d):
    shifted = perturb_potential(quadratic_medium_1d, 0.5)
    assert np.all(evaluate_scalar(shifted.h, T, X) == 0.5)
    assert shifted.description["potential_shift"] == 0.5
    assert shifted.medium_hash() != quadratic_medium_1d.medium_hash()


def test_identity_gauge_has_no_discrepancy(quadratic_medium_1d, pulse):
    grids = [Grid.build(n, 0.4, cfl=0.5) for n in (20, 40, 80)]
    result = dn_discrepancy(quadratic_medium_1d, GaugeFunction.identity(), pulse, grids)
    assert result.discrepancies == [0.0, 0.0, 0.0]
    assert not result.reliable
    assert math.isnan(result.order)
    assert [row[0] for row in result.rows()] == [0.05, 0.025, 0.0125]


def test_sinusoidal_gauge_discrepancy_converges(quadratic_medium_1d, pulse):
    grids = [Grid.build(n, 0.8, cfl=0.5) for n in (40, 80)]
    result = dn_discrepancy(quadratic_medium_1d, GaugeFunction.sinusoidal(0.1), pulse, grids)
    assert result.reliable
    assert result.discrepancies[1] < result.discrepancies[0] / 3


@pytest.mark.slow
def test_sinusoidal_gauge_preserves_dn_map(quadratic_medium_1d, pulse):
    grids = [Grid.build(n, 0.8, cfl=0.5) for n in (100, 200, 400)]
    rho = GaugeFunction.sinusoidal(0.1)
    result = dn_discrepancy(quadratic_medium_1d, rho, pulse, grids)
    assert result.reliable
    assert 1.5 <= result.order <= 2.5
    assert result.relative[-1] <= 1e-6
    control = dn_discrepancy(quadratic_medium_1d, rho, pulse, grids, perturbation=1.0)
    assert control.perturbation == 1.0
    assert control.relative[-1] > 0.5 * control.relative[0]
    assert control.relative[-1] > 10 * result.relative[-1]

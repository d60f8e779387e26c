import math

import numpy as np
import pytest

from wavescope.base import (
    IllConditionedFramesError,
    InconsistencyError,
    NonExactnessError,
    RankDeficiencyError,
    UndeterminedError,
    UnsupportedConfigurationError,
    constant_field,
    constant_one_form,
)
from wavescope.covector_lab import build_i3_frame, probe_directions
from wavescope.gauge import GaugeFunction, apply_gauge
from wavescope.recovery import (
    RESULT_HEADER,
    beta_relation_residuals,
    default_path_starts,
    integrate_rho,
    log_derivative_probe,
    recover_betas_point,
    recover_medium,
    recover_oneform,
    rho_from_coefficients,
    solve_oneform_point,
    verify_gauge_relations,
    verify_time_independence,
)
from wavescope.symbol_transport import MeasurementOracle
from wavescope.wave_solver import MediumParams

CENTER = (0.5, 0.5, 0.5, 0.5)


def with_one_form(medium: MediumParams, b) -> MediumParams:
    return MediumParams(metric=medium.metric, b=b, betas=medium.betas, name="shifted")


@pytest.fixture(scope="module")
def reference_oracle(recovery_reference):
    return MeasurementOracle(recovery_reference, name="reference")


@pytest.fixture(scope="module")
def sinusoidal_gauge():
    return GaugeFunction.sinusoidal(0.1, dim=3)


@pytest.fixture(scope="module")
def time_independence_frames():
    return build_i3_frame(math.pi / 2, math.pi / 3), build_i3_frame(math.pi / 2, math.pi / 4)


def test_log_derivative_probe(recovery_reference, reference_oracle):
    hidden = MeasurementOracle(with_one_form(recovery_reference, constant_one_form([0.2, 0.0, 0.0, 0.0])))
    probe = log_derivative_probe(CENTER, probe_directions(3)[0], reference_oracle, hidden)
    assert probe.values[0] == pytest.approx(0.2, abs=1e-8)
    assert probe.velocities[0, 0] == pytest.approx(1.0)


def test_probe_of_identical_media_is_zero(reference_oracle):
    direction = probe_directions(3)[1]
    probe = log_derivative_probe(CENTER, direction, reference_oracle, reference_oracle, s_values=(0.0, 0.1))
    assert np.all(probe.values == 0.0)


def test_recover_constant_one_form(recovery_reference, reference_oracle):
    delta = [0.2, 0.1, -0.05, 0.0]
    hidden = MeasurementOracle(with_one_form(recovery_reference, constant_one_form(delta)))
    solution = recover_oneform(CENTER, reference_oracle, hidden)
    assert solution.rank == 4
    assert np.allclose(solution.delta_b, delta, rtol=0, atol=1e-7)


def test_solve_oneform_point():
    rng = np.random.default_rng(7)
    velocities = rng.normal(size=(4, 4))
    delta_b = np.array([0.3, -0.1, 0.2, 0.05])
    solution = solve_oneform_point(velocities, velocities @ delta_b)
    assert np.allclose(solution.delta_b, delta_b, rtol=0, atol=1e-12)
    assert solution.residual < 1e-12
    with pytest.raises(RankDeficiencyError):
        solve_oneform_point(np.repeat(velocities[:1], 4, axis=0), np.zeros(4))


def test_integrate_rho_of_a_gauge(unit_box_3d, sinusoidal_gauge):
    q = np.array([0.4, 0.3, 0.6, 0.45])

    def delta_b(p):
        return 2.0 * sinusoidal_gauge.log_differential(p[0], p[1:])

    estimate = integrate_rho(delta_b, q, default_path_starts(q, unit_box_3d))
    assert estimate.value == pytest.approx(float(sinusoidal_gauge(q[0], q[1:])), rel=1e-9)
    assert estimate.discrepancy < 1e-9


def test_integrate_rho_rejects_non_exact_one_forms(unit_box_3d):
    q = np.array([0.0, 0.4, 0.7, 0.5])

    def rotation(p):
        return np.array([0.0, 0.5 * p[2], -0.5 * p[1], 0.0])

    with pytest.raises(NonExactnessError) as excinfo:
        integrate_rho(rotation, q, default_path_starts(q, unit_box_3d))
    assert excinfo.value.args


def test_default_path_starts(unit_box_3d):
    starts = default_path_starts(np.array([0.5, 0.2, 0.3, 0.4]), unit_box_3d)
    assert [s.tolist() for s in starts] == [[0.5, 0.0, 0.3, 0.4], [0.5, 0.2, 0.0, 0.4]]


def test_recover_betas_main_combination():
    estimate = recover_betas_point(4.0, -2.0, 1.0, (1.0, 2.0))
    assert estimate.combination == "main"
    assert estimate.beta2 == 1.0
    assert estimate.beta3 == 2.0
    assert estimate.residual == 0.0
    assert estimate.roots.size == 3


def test_recover_betas_scaled_by_rho():
    rho = 1.25
    beta2, beta3 = rho * 1.0, rho**2 * 2.0
    a = 2 * beta2**2 + beta3
    c_prime = 4 * beta2**3 - 3 * beta2 * beta3
    estimate = recover_betas_point(a, c_prime, rho, (1.0, 2.0))
    assert estimate.beta2 == pytest.approx(beta2, rel=1e-12)
    assert estimate.beta3 == pytest.approx(beta3, rel=1e-12)


def test_recover_betas_fallback_combination():
    estimate = recover_betas_point(7.5, 0.0, 1.0, (1.5, 3.0), e_prime=94.5)
    assert estimate.combination == "fallback"
    assert estimate.beta2 == pytest.approx(1.5, rel=1e-12)
    assert estimate.beta3 == pytest.approx(3.0, rel=1e-12)


def test_recover_betas_failures():
    with pytest.raises(UndeterminedError):
        recover_betas_point(0.0, -2.0, 1.0, (1.0, 2.0))
    with pytest.raises(UndeterminedError):
        recover_betas_point(4.0, 0.0, 1.0, (1.0, 2.0), e_prime=0.0)
    with pytest.raises(InconsistencyError):
        recover_betas_point(4.0, -2.0, 1.0, (1.0, 5.0))


def test_rho_from_coefficients():
    rho = 1.1
    assert rho_from_coefficients(4.0, 4.0 * rho**2, -2.0, -2.0 * rho**3) == pytest.approx(rho)
    assert rho_from_coefficients(4.0, 4.0 * rho**2, 0.0, 0.0, 22.0, 22.0 * rho**3) == pytest.approx(rho)
    with pytest.raises(UndeterminedError):
        rho_from_coefficients(4.0, 4.0, 0.0, 0.0)


def test_beta_relation_residuals():
    hidden = {2: [1.0, 2.0], 3: [2.0, 9.0]}
    residuals = beta_relation_residuals(np.array([1.0, 2.0]), hidden, {2: [1.0, 1.0], 3: [2.0, 2.0]})
    assert np.allclose(residuals[2], 0.0)
    assert residuals[3][0] == 0.0
    assert residuals[3][1] == pytest.approx(1 / 8)


def test_null_recovery_is_exact(recovery_reference, unit_box_3d):
    result = recover_medium(recovery_reference, MeasurementOracle(recovery_reference), [CENTER], unit_box_3d)
    assert result.size == 1
    assert result.rho[0] == 1.0
    assert result.beta2[0] == 1.0
    assert result.beta3[0] == 2.0
    assert np.all(result.delta_b == 0.0)
    assert result.skipped == []


def test_recovery_result_files(recovery_reference, unit_box_3d, tmp_path):
    result = recover_medium(recovery_reference, MeasurementOracle(recovery_reference), [CENTER], unit_box_3d)
    assert result.to_csv(tmp_path / "recovery.csv") == 1
    lines = (tmp_path / "recovery.csv").read_text().splitlines()
    assert lines[0] == ",".join(RESULT_HEADER)
    result.to_json(tmp_path / "recovery.json")
    assert (tmp_path / "recovery.json").exists()


def test_recovery_skips_degenerate_points(minkowski_3d, unit_box_3d):
    degenerate = MediumParams(metric=minkowski_3d, betas=(constant_field(1.0), constant_field(-2.0)))
    result = recover_medium(degenerate, MeasurementOracle(degenerate), [CENTER], unit_box_3d)
    assert result.size == 0
    assert result.skipped[0]["reason"].startswith("UndeterminedError")


def test_recovery_needs_three_dimensions(quadratic_medium_1d, unit_box_3d):
    with pytest.raises(UnsupportedConfigurationError):
        recover_medium(quadratic_medium_1d, MeasurementOracle(quadratic_medium_1d), [(0.5, 0.5)], unit_box_3d)
    with pytest.raises(TypeError):
        recover_medium(quadratic_medium_1d, quadratic_medium_1d, [(0.5, 0.5)], unit_box_3d)


@pytest.mark.slow
def test_gauged_recovery(recovery_reference, unit_box_3d, sinusoidal_gauge):
    hidden = apply_gauge(recovery_reference, sinusoidal_gauge)
    points = [(0.5, 0.4, 0.5, 0.6), (0.45, 0.6, 0.35, 0.5)]
    result = recover_medium(recovery_reference, MeasurementOracle(hidden), points, unit_box_3d)
    assert result.size == 2
    report = verify_gauge_relations(result, recovery_reference, hidden, rho_truth=sinusoidal_gauge)
    assert report.max["rho"] < 1e-5
    assert report.max["oneform_gauge"] < 1e-5
    assert report.max["beta2"] < 1e-4
    assert report.max["beta3"] < 1e-4
    assert np.allclose(result.rho_from_coefficients, result.rho, rtol=1e-3)


@pytest.mark.slow
def test_non_gauge_one_form_is_detected(recovery_reference, unit_box_3d):
    def rotation(t, x):
        x = np.asarray(x, dtype=float)
        zero = 0.0 * x[..., 0]
        return np.stack([zero, 0.5 * (x[..., 1] - 0.5), -0.5 * (x[..., 0] - 0.5), zero], axis=-1)

    hidden = MeasurementOracle(with_one_form(recovery_reference, rotation))
    with pytest.raises(NonExactnessError):
        recover_medium(recovery_reference, hidden, [(0.5, 0.3, 0.7, 0.5)], unit_box_3d)


def test_time_independent_gauge_passes(sinusoidal_gauge, time_independence_frames):
    verdict = verify_time_independence(CENTER, sinusoidal_gauge, (1.0, 2.0), time_independence_frames)
    assert verdict.passed
    assert verdict.branch == "beta2"
    assert verdict.I3[0] == pytest.approx(2.0)


def test_time_dependent_gauge_fails(time_independence_frames):
    rho = GaugeFunction.time_bump(amplitude=0.5, duration=1.0, dim=3)
    point = (0.3, 0.5, 0.5, 0.5)
    assert not verify_time_independence(point, rho, (1.0, 2.0), time_independence_frames).passed
    verdict = verify_time_independence(point, rho, (0.0, 1.0), time_independence_frames)
    assert verdict.branch == "beta3"
    assert not verdict.passed
    verdict = verify_time_independence(point, rho, (0.0, 0.0, 1.0), time_independence_frames)
    assert verdict.branch == "beta4"
    assert not verdict.passed


def test_time_independence_failures(sinusoidal_gauge, time_independence_frames):
    with pytest.raises(UndeterminedError):
        verify_time_independence(CENTER, sinusoidal_gauge, (0.0, 0.0, 0.0), time_independence_frames)
    same = (time_independence_frames[0], time_independence_frames[0])
    with pytest.raises(IllConditionedFramesError):
        verify_time_independence(CENTER, sinusoidal_gauge, (1.0, 2.0), same)


def smooth_one_form(t, x):
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    zero = 0.0 * x[..., 0]
    components = (
        0.2 * np.sin(2 * t) + zero,
        0.1 * x[..., 0] ** 2,
        0.15 * np.sin(2 * x[..., 1]),
        0.05 * x[..., 0] * x[..., 2],
    )
    return np.stack(np.broadcast_arrays(*components), axis=-1)


def test_null_recovery_off_the_lattice(recovery_reference, unit_box_3d):
    point = (0.5, 0.55, 0.41, 0.32)
    result = recover_medium(recovery_reference, MeasurementOracle(recovery_reference), [point], unit_box_3d)
    assert result.size == 1
    assert result.skipped == []
    assert result.rho[0] == 1.0


def test_one_form_error_shrinks_with_the_step(recovery_reference, reference_oracle):
    hidden = MeasurementOracle(with_one_form(recovery_reference, smooth_one_form))
    truth = smooth_one_form(0.5, np.array([0.5, 0.5, 0.5]))
    errors = []
    for step in (2e-2, 1e-2):
        solution = recover_oneform(CENTER, reference_oracle, hidden, step=step, richardson=False)
        errors.append(np.max(np.abs(solution.delta_b - truth)))
    assert 3.5 <= errors[0] / errors[1] <= 4.5

import math

import numpy as np
import pytest

from wavescope.base import DegenerateFrameError, InvalidInputError, RankDeficiencyError, SingularConstructionError
from wavescope.covector_lab import (
    build_four_frame,
    build_i3_frame,
    build_three_frame,
    fit_laurent,
    four_frame_expansion_variable,
    four_frame_theta,
    i3_closed_form,
    interaction_sums,
    leading_laurent_model,
    lightlike_gram,
    minkowski_norm2,
    minkowski_pairing,
    probe_directions,
    sweep_four_frame,
)

S_VALUES = np.linspace(0.05, 0.2, 24)
LAURENT_ORDERS = (-3, -2, -1, 0, 1, 2)


def test_three_frame():
    frame = build_three_frame(r0=0.0, s=0.1)
    assert frame.null_defect() <= 1e-15
    assert frame.rank() == 3
    assert frame.residual() <= 1e-12


def test_three_frame_random_decompositions():
    rng = np.random.default_rng(2)
    for _ in range(100):
        frame = build_three_frame(r0=rng.uniform(-0.9, 0.9), s=rng.uniform(0.05, 0.95))
        assert frame.residual() <= 1e-12 * max(1.0, float(np.max(np.abs(frame.weights))))


def test_three_frame_rejects_coincident_members():
    with pytest.raises(DegenerateFrameError):
        build_three_frame(r0=0.0, s=0.0)


def test_i3_frame_weights():
    frame = build_i3_frame(math.pi / 3, math.pi / 2)
    assert frame.scale == pytest.approx(2.0, abs=1e-15)
    assert np.allclose(frame.weights, [-1.0, 1.5 + math.sqrt(3) / 2, 1.5 - math.sqrt(3) / 2], atol=1e-15)
    assert frame.residual() <= 1e-12


def test_i3_frame_singular_denominator():
    theta = 0.7
    with pytest.raises(SingularConstructionError):
        build_i3_frame(math.pi - theta, theta)


def test_i3_frames_decompose_target():
    rng = np.random.default_rng(3)
    for _ in range(100):
        phi, theta = rng.uniform(0.2, 2.8, 2)
        if abs(math.cos(phi) + math.cos(theta)) < 0.05:
            continue
        assert build_i3_frame(phi, theta).residual() <= 1e-12


def test_four_frame():
    frame = build_four_frame(0.0, 0.2)
    assert frame.null_defect() <= 1e-15
    assert frame.rank() == 4
    assert frame.residual() <= 1e-10


def test_four_frame_collapses_at_zero_angle():
    with pytest.raises(RankDeficiencyError):
        build_four_frame(0.3, 0.0)


def test_four_frame_random_decompositions():
    rng = np.random.default_rng(4)
    for _ in range(50):
        frame = build_four_frame(rng.uniform(0, 2 * math.pi), rng.uniform(0.05, 0.5))
        assert frame.residual() <= 1e-9 * max(1.0, float(np.max(np.abs(frame.weights))))


def test_i3_example(i3_angles):
    coefficients = interaction_sums(build_i3_frame(*i3_angles))
    assert coefficients.I3 == pytest.approx(2.0, abs=1e-12)
    assert coefficients.I3_closed_form == pytest.approx(2.0, abs=1e-12)
    assert coefficients.sum_identity == pytest.approx(-1.0, abs=1e-12)


def test_i3_direct_sum_matches_closed_form():
    rng = np.random.default_rng(5)
    tested = 0
    while tested < 1000:
        phi, theta = rng.uniform(0.1, 2 * math.pi - 0.1, 2)
        if abs(math.cos(phi) + math.cos(theta)) < 0.05 or abs(math.sin(theta)) < 0.05:
            continue
        try:
            frame = build_i3_frame(phi, theta)
        except DegenerateFrameError:
            continue
        coefficients = interaction_sums(frame)
        scale = max(1.0, abs(coefficients.I3_closed_form))
        assert abs(coefficients.I3 - coefficients.I3_closed_form) <= 1e-12 * scale * 100
        assert coefficients.sum_identity == pytest.approx(-1.0, abs=1e-10)
        tested += 1


def test_three_frame_sum_identity():
    for r0 in (-0.5, 0.2, 0.8):
        for s in np.linspace(0.05, 0.95, 19):
            assert interaction_sums(build_three_frame(r0, s)).sum_identity == pytest.approx(-1.0, abs=1e-12)


def test_lightlike_gram_matches_the_plain_pairing():
    rng = np.random.default_rng(3)
    directions = rng.normal(size=(5, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    time = rng.choice([-1.0, 1.0], size=5) * rng.uniform(0.5, 2.0, size=5)
    members = np.column_stack([time, np.abs(time)[:, None] * directions])
    plain = minkowski_pairing(members[:, None, :], members[None, :, :])
    assert np.allclose(lightlike_gram(members), plain, rtol=0, atol=1e-12)
    assert np.all(np.diag(lightlike_gram(members)) == 0.0)


def test_i3_closed_form_value():
    assert i3_closed_form(math.pi / 2, math.pi / 3) == pytest.approx(2.0)
    assert i3_closed_form(math.pi / 3, math.pi / 2) == pytest.approx(1.0)


def test_interaction_sums_rejects_non_frames():
    with pytest.raises(TypeError):
        interaction_sums(np.zeros((4, 4)))


def test_fit_laurent_exact_model():
    s = np.array([0.05, 0.08, 0.1, 0.15, 0.2])
    values = -2 / s**3 + 14 / s**2 + 10 / s + 5
    fit = fit_laurent(list(zip(s, values)))
    assert np.allclose(fit.coefficients, [-2, 14, 10, 5], rtol=0, atol=1e-6)
    assert fit.residual < 1e-6


def test_fit_laurent_needs_enough_samples():
    with pytest.raises(InvalidInputError):
        fit_laurent([(0.1, 1.0), (0.2, 2.0)])


@pytest.fixture(scope="module")
def four_frame_sweep():
    return sweep_four_frame(0.3, S_VALUES)


def test_c_expansion(four_frame_sweep):
    fit = fit_laurent([(s, ic.C) for s, ic in four_frame_sweep], LAURENT_ORDERS)
    assert fit.coefficient(-3) == pytest.approx(-2.0, rel=0.02)
    assert fit.coefficient(-2) == pytest.approx(14.0, rel=0.05)
    assert fit.coefficient(-1) == pytest.approx(10.0, rel=0.10)


def test_d_expansion(four_frame_sweep):
    fit = fit_laurent([(s, ic.D) for s, ic in four_frame_sweep], LAURENT_ORDERS)
    assert fit.coefficient(-3) == pytest.approx(1.5, rel=0.02)
    assert fit.coefficient(-2) == pytest.approx(-10.5, rel=0.05)
    assert fit.coefficient(-1) == pytest.approx(-2.25, rel=0.10)


def test_leading_model_matches_coefficient():
    s = 0.05
    frame = build_four_frame(0.3, four_frame_theta(s))
    value = interaction_sums(frame, beta2=1.0, beta3=2.0).curly_c
    model = leading_laurent_model(s, 1.0, 2.0)
    # the difference is the regular part, small against the s^-3 term
    assert abs(value - model) < 0.05 * abs(model) + 0.05 / s**3


def test_expansion_variable_round_trip():
    assert four_frame_expansion_variable(four_frame_theta(0.1)) == pytest.approx(0.1)
    assert 1 - math.cos(four_frame_theta(0.1)) == pytest.approx(2 * 0.1**2)


def test_probe_directions_are_null_and_independent():
    directions = probe_directions(3)
    assert np.allclose(minkowski_norm2(directions), 0.0)
    assert np.all(directions[:, 0] == -0.5)
    velocities = directions * np.array([-2.0, 2.0, 2.0, 2.0])
    assert np.linalg.matrix_rank(velocities) == 4

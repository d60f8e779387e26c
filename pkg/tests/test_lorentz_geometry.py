import math

import numpy as np
import pytest

from wavescope.base import DomainError, InvalidInputError, UnsupportedConfigurationError
from wavescope.lorentz_geometry import (
    Box,
    CausalType,
    ProductMetric,
    TimeOrientation,
    boundary_crossings,
    classify_covector,
    detect_conjugate_point,
    in_causal_future,
    inner_product,
    raise_lower,
    time_separation,
    trace_bicharacteristic,
)

ORIGIN = (0.0, 0.0, 0.0, 0.0)


def test_raise_lower_examples():
    flat = ProductMetric.minkowski()
    assert np.array_equal(raise_lower(flat, ORIGIN, [-1, 1, 0, 0]), [1, 1, 0, 0])
    fast = ProductMetric.constant(2.0)
    assert np.array_equal(raise_lower(fast, ORIGIN, [0, 1, 0, 0]), [0, 4, 0, 0])


def test_raise_lower_round_trip(lens_metric):
    rng = np.random.default_rng(0)
    point = (0.1, 0.4, 0.6)
    for _ in range(20):
        zeta = rng.normal(size=3)
        back = raise_lower(lens_metric, point, raise_lower(lens_metric, point, zeta), direction="lower")
        assert np.allclose(back, zeta, rtol=0, atol=1e-14)


def test_inner_product_of_null_covector():
    flat = ProductMetric.minkowski()
    assert inner_product(flat, ORIGIN, [-1, 1, 0, 0], [-1, 1, 0, 0]) == 0.0
    assert inner_product(flat, ORIGIN, [1, 0, 0, 0], [0, 0, 0, 0], covectors=False) == 0.0


@pytest.mark.parametrize(
    "zeta, kind, orientation",
    [
        ([-1, 1, 0, 0], CausalType.LIGHTLIKE, TimeOrientation.FUTURE),
        ([-2, 1, 0, 0], CausalType.TIMELIKE, TimeOrientation.FUTURE),
        ([1, 1, 0, 0], CausalType.LIGHTLIKE, TimeOrientation.PAST),
        ([0, 1, 0, 0], CausalType.SPACELIKE, TimeOrientation.NONE),
    ],
)
def test_classify_covector(zeta, kind, orientation):
    character = classify_covector(ProductMetric.minkowski(), ORIGIN, zeta)
    assert character.kind == kind
    assert character.orientation == orientation


def test_classify_zero_covector():
    with pytest.raises(InvalidInputError):
        classify_covector(ProductMetric.minkowski(), ORIGIN, [0, 0, 0, 0])


def test_point_outside_padded_domain(minkowski_3d):
    with pytest.raises(DomainError):
        raise_lower(minkowski_3d, (0.0, 2.0, 0.5, 0.5), [-1, 1, 0, 0])


def test_straight_null_ray():
    path = trace_bicharacteristic(ProductMetric.minkowski(), ORIGIN, [-0.5, 0.5, 0, 0], s_max=10.0)
    s = np.array([0.0, 2.5, 7.25, 10.0])
    assert np.allclose(path.position(s), np.column_stack([s, s, 0 * s, 0 * s]), atol=1e-12)
    assert path.hamiltonian_drift() <= 1e-10
    assert not path.truncated


def test_backward_trace_is_sampled_increasingly():
    path = trace_bicharacteristic(ProductMetric.minkowski(), ORIGIN, [-0.5, 0.5, 0, 0], s_max=-2.0)
    assert path.start == pytest.approx(-2.0)
    assert path.end == 0.0
    assert np.allclose(path.position(-2.0), [-2.0, -2.0, 0.0, 0.0])


def test_non_null_start_is_rejected():
    with pytest.raises(InvalidInputError):
        trace_bicharacteristic(ProductMetric.minkowski(), ORIGIN, [-1.0, 0.5, 0, 0], s_max=1.0)


def test_lens_ray_conserves_hamiltonian():
    lens = ProductMetric.gaussian(amplitude=0.2, dim=3)
    c0 = float(lens.c(np.array([-2.0, 0.3, 0.0])))
    path = trace_bicharacteristic(lens, (0.0, -2.0, 0.3, 0.0), [-0.5, 0.5 / c0, 0, 0], s_max=4.0)
    assert path.hamiltonian_drift() <= 1e-8
    # the ray bends off the x1 axis
    assert abs(path.points[-1, 2] - 0.3) > 1e-3


def test_boundary_crossings_1d():
    metric = ProductMetric.minkowski(dim=1, bounds=((-2.0, 3.0),))
    path = trace_bicharacteristic(metric, (0.0, -0.5), [-0.5, 0.5], s_max=2.0)
    crossings = boundary_crossings(path, Box.unit(1))
    assert crossings.entry == pytest.approx(0.5, abs=1e-12)
    assert crossings.exit == pytest.approx(1.5, abs=1e-12)
    assert crossings.entry_transversal and crossings.exit_transversal


def test_ray_parallel_to_boundary_never_enters():
    metric = ProductMetric.minkowski(dim=2, bounds=((-2.0, 3.0),) * 2)
    path = trace_bicharacteristic(metric, (0.0, -0.5, -0.5), [-0.5, 0.5, 0.0], s_max=3.0)
    crossings = boundary_crossings(path, Box.unit(2))
    assert not crossings.present
    assert crossings.exit is None


def test_trace_annotates_crossings():
    metric = ProductMetric.minkowski(dim=1, bounds=((-2.0, 3.0),))
    path = trace_bicharacteristic(metric, (0.0, -0.5), [-0.5, 0.5], s_max=2.0, domain=Box.unit(1))
    assert path.entry == pytest.approx(0.5)
    assert path.exit == pytest.approx(1.5)


def test_flat_space_has_no_conjugate_points():
    path = trace_bicharacteristic(ProductMetric.minkowski(), ORIGIN, [-0.5, 0.5, 0, 0], s_max=5.0)
    assert detect_conjugate_point(path) is None


def _lens_ray(ds, offset=0.0):
    lens = ProductMetric.gaussian(amplitude=-0.5, dim=3)
    c0 = float(lens.c(np.array([-3.0, offset, 0.0])))
    return trace_bicharacteristic(lens, (0.0, -3.0, offset, 0.0), [-0.5, 0.5 / c0, 0, 0], s_max=6.0, ds=ds)


@pytest.mark.slow
def test_focusing_lens_has_stable_conjugate_point():
    coarse = detect_conjugate_point(_lens_ray(2e-2))
    fine = detect_conjugate_point(_lens_ray(1e-2))
    assert coarse is not None and fine is not None
    assert 0.0 < fine < 6.0
    assert abs(coarse - fine) <= 0.01 * fine


@pytest.mark.slow
@pytest.mark.parametrize("offset", [0.0, 0.05, 0.2])
def test_lens_conjugate_point_near_the_axis(offset):
    # on and near the axis the focusing is symmetric and the Jacobi field degenerates in two directions at once
    conjugate = detect_conjugate_point(_lens_ray(2e-2, offset))
    assert conjugate is not None
    assert 0.0 < conjugate < 6.0


def test_truncated_ray_ends_on_the_faces():
    flat = ProductMetric.minkowski(dim=1, bounds=((0.0, 1.0),))
    path = trace_bicharacteristic(flat, (0.0, 0.37), [-0.5, 0.5], s_max=5.0, ds=0.1)
    assert path.truncated
    assert path.points[-1, 1] == pytest.approx(1.0, abs=1e-12)
    lens = ProductMetric.gaussian(amplitude=0.3, dim=2, width=0.3, center=(0.5, 0.5), bounds=((0.0, 1.0),) * 2)
    c0 = float(lens.c(np.array([0.1, 0.45])))
    curved = trace_bicharacteristic(lens, (0.0, 0.1, 0.45), [-0.5, 0.5 / c0, 0.0], s_max=5.0)
    assert curved.truncated
    assert np.max(np.abs(curved.points[-1, 1:] - 0.5)) == pytest.approx(0.5, abs=1e-9)


def test_underresolved_steps_are_flagged(caplog):
    lens = ProductMetric.gaussian(amplitude=0.2, dim=3)
    c0 = float(lens.c(np.array([-0.5, 0.3, 0.0])))
    zeta = [-0.5, 0.5 / c0, 0, 0]
    assert not trace_bicharacteristic(lens, (0.0, -0.5, 0.3, 0.0), zeta, s_max=0.05).underresolved
    with caplog.at_level("WARNING"):
        path = trace_bicharacteristic(lens, (0.0, -0.5, 0.3, 0.0), zeta, s_max=0.05, step_tol=1e-30, max_halvings=2)
    assert path.underresolved
    assert "halvings" in caplog.text


def test_time_separation_examples():
    flat = ProductMetric.minkowski()
    assert time_separation(flat, ORIGIN, (2.0, 1.0, 0.0, 0.0)) == pytest.approx(math.sqrt(3.0))
    assert time_separation(flat, ORIGIN, (1.0, 2.0, 0.0, 0.0)) == 0.0
    assert time_separation(flat, ORIGIN, (-2.0, 0.0, 0.0, 0.0)) == 0.0
    assert in_causal_future(flat, ORIGIN, (1.0, 1.0, 0.0, 0.0))


def test_reverse_triangle_inequality():
    flat = ProductMetric.minkowski()
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 1000:
        x = rng.uniform(-1, 1, 4)
        y = x + np.concatenate([[rng.uniform(1, 2)], rng.uniform(-0.5, 0.5, 3)])
        z = y + np.concatenate([[rng.uniform(1, 2)], rng.uniform(-0.5, 0.5, 3)])
        assert time_separation(flat, x, y) + time_separation(flat, y, z) <= time_separation(flat, x, z) + 1e-12
        checked += 1


def test_time_separation_needs_constant_speed(lens_metric):
    with pytest.raises(UnsupportedConfigurationError):
        time_separation(lens_metric, (0.0, 0.5, 0.5), (1.0, 0.5, 0.5))

"""
    Shared fixtures for the wavescope tests: metrics, media, grids and boundary pulses.
"""
import math

import pytest

from wavescope.base import constant_field, constant_one_form
from wavescope.lorentz_geometry import Box, ProductMetric
from wavescope.wave_solver import BoundarySource, Grid, MediumParams

UNIT_BOX_3D = ((0.0, 1.0),) * 3


@pytest.fixture(scope="session")
def minkowski_1d() -> ProductMetric:
    return ProductMetric.minkowski(dim=1, bounds=((0.0, 1.0),))


@pytest.fixture(scope="session")
def minkowski_3d() -> ProductMetric:
    return ProductMetric.minkowski(dim=3, bounds=UNIT_BOX_3D)


@pytest.fixture(scope="session")
def lens_metric() -> ProductMetric:
    return ProductMetric.gaussian(amplitude=0.3, dim=2, width=0.3, center=(0.5, 0.5), bounds=((0.0, 1.0),) * 2)


@pytest.fixture(scope="session")
def unit_box_3d() -> Box:
    return Box(UNIT_BOX_3D)


@pytest.fixture(scope="session")
def linear_medium_1d(minkowski_1d) -> MediumParams:
    return MediumParams(metric=minkowski_1d, name="linear")


@pytest.fixture(scope="session")
def quadratic_medium_1d(minkowski_1d) -> MediumParams:
    return MediumParams(metric=minkowski_1d, betas=(constant_field(0.5),), name="quadratic")


@pytest.fixture(scope="session")
def damped_medium_1d(minkowski_1d) -> MediumParams:
    return MediumParams(
        metric=minkowski_1d, b=constant_one_form([0.2, 0.0]), betas=(constant_field(0.5),), name="damped"
    )


@pytest.fixture(scope="session")
def recovery_reference(minkowski_3d) -> MediumParams:
    return MediumParams(metric=minkowski_3d, betas=(constant_field(1.0), constant_field(2.0)), name="reference")


@pytest.fixture(scope="session")
def grid_1d(minkowski_1d) -> Grid:
    return Grid.for_metric(minkowski_1d, 100, 0.8, cfl=0.5, length=[1.0], origin=[0.0])


@pytest.fixture(scope="session")
def pulse() -> BoundarySource:
    return BoundarySource.pulse(amplitude=1e-3, start=0.0, duration=0.4, power=8, nodes=(0,))


@pytest.fixture(scope="session")
def i3_angles() -> tuple[float, float]:
    return math.pi / 2, math.pi / 3

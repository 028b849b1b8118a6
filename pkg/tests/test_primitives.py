import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from svfi_nbv.primitives import (
    HARD,
    SLACK,
    ConstraintRow,
    Line,
    Plane,
    SingularDistanceError,
    point_line_distance,
    point_line_distance_jacobian,
    point_line_vfi_row,
    point_plane_distance,
    point_plane_vfi_row,
)

Z_UP = Plane(np.array([0.0, 0.0, 1.0]), 0.2)
coord = st.floats(-3.0, 3.0, allow_nan=False)


def test_point_plane_distance_examples():
    assert point_plane_distance([1.0, 2.0, 0.5], Z_UP) == pytest.approx(0.3, abs=1e-15)
    assert point_plane_distance([4.0, -1.0, 0.2], Z_UP) == 0.0
    assert point_plane_distance([0.0, 0.0, -0.1], Z_UP) == pytest.approx(-0.3, abs=1e-15)


def test_plane_vfi_bounds():
    j = np.eye(3)
    at = point_plane_vfi_row([0.0, 0.0, 0.3], j, Z_UP, d_safe=0.1, eta=1.0)
    assert at.bound == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_array_equal(at.coeffs, [0.0, 0.0, -1.0])
    far = point_plane_vfi_row([0.0, 0.0, 1.3], j, Z_UP, d_safe=0.1, eta=1.0)
    assert far.bound == pytest.approx(1.0)
    # approach at exactly 1 m/s is allowed, faster is not
    assert far.margin(np.array([0.0, 0.0, -1.0])) == pytest.approx(0.0)
    assert far.margin(np.array([0.0, 0.0, -1.1])) < 0
    inside = point_plane_vfi_row([0.0, 0.0, 0.25], j, Z_UP, d_safe=0.1, eta=1.0)
    assert inside.bound < 0
    assert inside.margin(np.zeros(3)) < 0  # standing still is not enough, it must retreat
    assert at.kind == HARD


def test_point_line_distance_examples():
    z = Line(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    assert point_line_distance([3.0, 4.0, 7.0], z) == pytest.approx(5.0)
    assert point_line_distance([0.0, 0.0, -2.0], z) == 0.0


@given(coord, coord, coord, st.floats(-10.0, 10.0))
def test_line_distance_invariant_to_anchor(x, y, z, s):
    d = np.array([1.0, 2.0, 2.0]) / 3.0
    a = Line(np.array([0.1, -0.2, 0.3]), d)
    b = Line(a.p_l + s * d, d)
    assert point_line_distance([x, y, z], a) == pytest.approx(point_line_distance([x, y, z], b), abs=1e-9)


def test_line_jacobian_radial_and_parallel_motion():
    line = Line(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    t = np.array([0.3, 0.4, 1.0])
    j = np.eye(3)
    d, jd = point_line_distance_jacobian(t, j, line)
    assert d == pytest.approx(0.5)
    radial = np.array([0.3, 0.4, 0.0]) / 0.5 * 0.7
    assert jd @ radial == pytest.approx(0.7)
    assert jd @ np.array([0.0, 0.0, 2.0]) == pytest.approx(0.0, abs=1e-15)


def test_line_jacobian_forward_differences(rng):
    for _ in range(50):
        d = rng.standard_normal(3)
        line = Line(rng.standard_normal(3), d / np.linalg.norm(d))
        t = rng.standard_normal(3)
        j = rng.standard_normal((3, 5))
        q = np.zeros(5)
        _, jd = point_line_distance_jacobian(t, j, line)
        for i in range(5):
            e = np.zeros(5)
            e[i] = 1e-7
            fd = (point_line_distance(t + j @ (q + e), line) - point_line_distance(t, line)) / 1e-7
            assert abs(fd - jd[i]) < 1e-5


def test_line_row_is_slack_eligible_and_singular_raises():
    line = Line(np.zeros(3), np.array([1.0, 0.0, 0.0]), radius=0.05)
    row = point_line_vfi_row([0.0, 0.5, 0.0], np.eye(3), line, 0.125, 1.0)
    assert row.kind == SLACK
    assert row.bound == pytest.approx(0.375)
    with pytest.raises(SingularDistanceError):
        point_line_distance_jacobian([2.0, 0.0, 0.0], np.eye(3), line)


def test_validation_of_primitives():
    with pytest.raises(ValueError):
        Plane(np.array([0.0, 0.0, 2.0]), 0.0)
    with pytest.raises(ValueError):
        Line(np.zeros(3), np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ValueError):
        ConstraintRow(np.zeros(3), 0.0, kind="soft")

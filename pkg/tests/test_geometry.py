import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from lanecarto.geometry import (
    cumulative_length,
    point_in_polygon,
    points_in_polygon,
    polyline_length,
    project_onto_polyline,
    resample_polyline,
    signed_area,
    wrap_angle,
)

coord = st.floats(-100, 100, allow_nan=False)


def test_polyline_length_and_cumulative():
    poly = [(0, 0), (3, 4), (3, 10)]
    assert polyline_length(poly) == 11.0
    assert np.allclose(cumulative_length(poly), [0, 5, 11])


def test_project_onto_polyline_interior_and_clamped():
    poly = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]])
    d, s, k = project_onto_polyline([[4.0, 1.0], [-3.0, 0.0], [12.0, 5.0]], poly)
    assert np.allclose(d, [1.0, 3.0, 2.0])
    assert np.allclose(s, [4.0, 0.0, 15.0])
    assert list(k) == [0, 0, 1]


def test_resample_spacing():
    P = resample_polyline([(0, 0), (10, 0)], 2.5)
    assert np.allclose(P[:, 0], [0, 2.5, 5, 7.5, 10])


def test_point_in_polygon_boundary_counts_inside():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert point_in_polygon((0.5, 0.5), sq)
    assert point_in_polygon((1.0, 0.5), sq)
    assert not point_in_polygon((1.5, 0.5), sq)


def test_signed_area_orientation():
    assert signed_area([(0, 0), (1, 0), (0, 1)]) == 0.5
    assert signed_area([(0, 0), (0, 1), (1, 0)]) == -0.5


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_vectorized_pip_matches_scalar_away_from_edges(x, y):
    poly = [(-10, -10), (20, -10), (5, 15), (-15, 8)]
    got = bool(points_in_polygon([[x, y]], poly)[0])
    d, _, _ = project_onto_polyline([[x, y]], np.vstack([poly, poly[:1]]))
    if d[0] > 1e-6:
        assert got == point_in_polygon((x, y), poly)


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_wrap_angle_range(a):
    w = float(wrap_angle(a))
    assert -math.pi <= w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


@given(st.lists(st.tuples(coord, coord), min_size=2, max_size=8), st.tuples(coord, coord))
def test_projection_distance_is_minimal_over_vertices(poly, p):
    P = np.asarray(poly)
    d, s, _ = project_onto_polyline([p], P)
    vd = np.hypot(*(P - np.asarray(p)).T).min()
    assert d[0] <= vd + 1e-9
    assert -1e-9 <= s[0] <= polyline_length(P) + 1e-9

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lanecarto.spline import DegenerateKnotsError, NaturalSpline, thomas_solve


def test_thomas_matches_dense():
    rng = np.random.default_rng(1)
    n = 8
    sub, sup = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
    diag = 4 + rng.uniform(0, 1, n)
    A = np.diag(diag) + np.diag(sub[1:], -1) + np.diag(sup[:-1], 1)
    b = rng.normal(size=n)
    assert np.allclose(thomas_solve(sub, diag, sup, b), np.linalg.solve(A, b))


def test_two_knots_straight():
    sp = NaturalSpline([0, 10], [1, 3])
    s = np.linspace(0, 10, 11)
    assert np.allclose(sp(s), 1 + 0.2 * s)
    assert np.allclose(sp(s, deriv=2), 0)


def test_parabola_interpolated():
    x = np.array([0.0, 1, 2, 3, 4])
    sp = NaturalSpline(x, x ** 2)
    assert np.max(np.abs(sp(x) - x ** 2)) < 1e-9


def test_duplicate_knots():
    with pytest.raises(DegenerateKnotsError):
        NaturalSpline([0, 1, 1, 2], [0, 1, 2, 3])


def conditions(sp):
    """Max residual of C0/C1/C2 at interior knots and natural end conditions."""
    x, a, b, c, d = sp.knots, sp.a, sp.b, sp.c, sp.d
    h = np.diff(x)
    end_v = a + b * h + c * h ** 2 + d * h ** 3
    end_d1 = b + 2 * c * h + 3 * d * h ** 2
    end_d2 = 2 * c + 6 * d * h
    res = [
        np.abs(a - sp.values[:-1]).max(),
        abs(end_v[-1] - sp.values[-1]),
        np.abs(end_v[:-1] - a[1:]).max(initial=0),
        np.abs(end_d1[:-1] - b[1:]).max(initial=0),
        np.abs(end_d2[:-1] - 2 * c[1:]).max(initial=0),
        abs(2 * c[0]),
        abs(end_d2[-1]),
    ]
    return max(res)


def test_random_six_knots():
    rng = np.random.default_rng(3)
    x = np.cumsum(rng.uniform(0.5, 5, 6))
    assert conditions(NaturalSpline(x, rng.normal(size=6))) < 1e-8


@given(st.lists(st.floats(0.2, 20), min_size=1, max_size=12), st.integers(0, 2**31))
def test_conditions_property(gaps, seed):
    x = np.concatenate([[0.0], np.cumsum(gaps)])
    y = np.random.default_rng(seed).normal(scale=3, size=len(x))
    sp = NaturalSpline(x, y)
    assert conditions(sp) < 1e-8
    assert np.allclose(sp(x), y, atol=1e-9)

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lanecarto.dbscan import NOISE, dbscan


def reference_dbscan(P, eps, min_pts):
    """Quadratic textbook DBSCAN with the same index-order scan."""
    n = len(P)
    D = np.sqrt(((P[:, None, :] - P[None, :, :]) ** 2).sum(-1))
    nb = [list(np.flatnonzero(D[i] <= eps)) for i in range(n)]
    lab = [None] * n
    c = 0
    for i in range(n):
        if lab[i] is not None:
            continue
        if len(nb[i]) < min_pts:
            lab[i] = -1
            continue
        lab[i] = c
        seeds = list(nb[i])
        k = 0
        while k < len(seeds):
            j = seeds[k]
            k += 1
            if lab[j] == -1:
                lab[j] = c
            if lab[j] is not None:
                continue
            lab[j] = c
            if len(nb[j]) >= min_pts:
                seeds.extend(nb[j])
        c += 1
    return np.array(lab)


def same_partition(a, b):
    if not np.array_equal(a == NOISE, b == -1):
        return False
    pairs = set(zip(a[a >= 0].tolist(), b[b >= 0].tolist()))
    return len(pairs) == len({p[0] for p in pairs}) == len({p[1] for p in pairs})


def test_two_groups():
    rng = np.random.default_rng(0)
    P = np.vstack([rng.uniform(0, 0.5, (10, 2)), rng.uniform(0, 0.5, (10, 2)) + [5.5, 0]])
    lab = dbscan(P, 1.0, 3)
    assert lab.max() == 1 and (lab == NOISE).sum() == 0


def test_single_point_is_noise():
    assert dbscan([[0, 0]], 1.0, 3).tolist() == [NOISE]


def test_empty():
    assert len(dbscan(np.zeros((0, 2)), 1.0, 3)) == 0


def test_200_random_points_match_reference():
    P = np.random.default_rng(7).uniform(0, 15, (200, 2))
    assert same_partition(dbscan(P, 1.0, 4), reference_dbscan(P, 1.0, 4))


@settings(max_examples=40)
@given(arrays(float, st.tuples(st.integers(0, 120), st.just(2)), elements=st.floats(0, 10)),
       st.floats(0.2, 2.0), st.integers(1, 6))
def test_matches_reference(P, eps, min_pts):
    lab = dbscan(P, eps, min_pts)
    assert same_partition(lab, reference_dbscan(P, eps, min_pts))

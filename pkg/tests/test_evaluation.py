import copy
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import scenario
from lanecarto.evaluation import (
    AssociationError,
    Gate,
    LaneMatchResult,
    evaluate,
    match_lanes,
    miou_scores,
    polygon_iou,
    precision_recall,
    rectify,
    rigid_align,
    trajectory_rms,
)
from lanecarto.intersection import Intersection, LaneConnection
from lanecarto.pipeline import truth_to_document


def rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def square(x0, y0, w=1.0):
    return [(x0, y0), (x0 + w, y0), (x0 + w, y0 + w), (x0, y0 + w)]


def test_rigid_translation_and_rotation():
    E = np.random.default_rng(0).uniform(-10, 10, (30, 2))
    a = rigid_align(E, E + [1, 2])
    assert np.allclose(a.R, np.eye(2), atol=1e-9) and np.allclose(a.t, [1, 2], atol=1e-9)
    b = rigid_align(E, E @ rot(math.radians(30)).T)
    assert b.angle == pytest.approx(math.radians(30), abs=1e-9)


def test_rigid_degenerate():
    a = rigid_align(np.zeros((5, 2)), np.ones((5, 2)))
    assert a.degenerate and np.allclose(a.R, np.eye(2))


def test_rigid_noisy_vs_grid_oracle():
    rng = np.random.default_rng(1)
    E = rng.uniform(-10, 10, (50, 2))
    G = E @ rot(0.2).T + [0.5, -0.3] + rng.normal(0, 0.01, E.shape)
    a = rigid_align(E, G)
    ours = np.sqrt(np.mean(np.sum((a.apply(E) - G) ** 2, axis=1)))
    best = np.inf
    # angle grid at 1 mrad; for each angle the optimal translation is the centroid difference
    for th in np.arange(0.15, 0.25, 0.001):
        RE = E @ rot(th).T
        t = (G - RE).mean(axis=0)
        best = min(best, np.sqrt(np.mean(np.sum((RE + t - G) ** 2, axis=1))))
    assert ours <= best + 1e-12


@given(st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50), st.integers(0, 2**31))
def test_rigid_exact(theta, tx, ty, seed):
    E = np.random.default_rng(seed).uniform(-20, 20, (10, 2))
    a = rigid_align(E, E @ rot(theta).T + [tx, ty])
    assert np.max(np.abs(a.apply(E) - (E @ rot(theta).T + [tx, ty]))) < 1e-9


def test_rectify_recovers_shift():
    x = np.linspace(0, 50, 201)
    gt = np.column_stack([x, 4 * np.sin(x / 6)])
    est = gt @ rot(0.01).T + [0.3, -0.2]
    a = rectify([(est, gt)])
    # point-to-curve association leaves sliding along the curve free; only the distance is pinned
    assert trajectory_rms(a.apply(est), gt, interior_only=False) < 0.01
    assert trajectory_rms(est, gt, interior_only=False) > 0.1


def test_trajectory_rms_examples():
    x = np.linspace(0, 100, 1001)
    gt = np.column_stack([x, np.zeros_like(x)])
    assert trajectory_rms(gt, gt) == 0.0
    assert trajectory_rms(gt + [0, 0.2], gt) == pytest.approx(0.2)
    wave = np.column_stack([x, 0.3 * np.sin(2 * math.pi * x / 10)])
    assert trajectory_rms(wave, gt) == pytest.approx(0.3 / math.sqrt(2), rel=0.02)


def test_trajectory_rms_reparameterization():
    x = np.linspace(0, 60, 300)
    est = np.column_stack([x, np.sin(x / 8)])
    fine = np.column_stack([np.linspace(0, 60, 601), np.sin(np.linspace(0, 60, 601) / 8) + 0.1])
    coarse = fine[::4]
    a, b = trajectory_rms(est, fine), trajectory_rms(est, coarse)
    assert abs(a - b) / a < 0.01


def test_polygon_iou_examples():
    assert polygon_iou(square(0, 0), square(0, 0)) == 1.0
    assert polygon_iou(square(0, 0), square(3, 0)) == 0.0
    assert polygon_iou(square(0, 0), square(0.5, 0)) == pytest.approx(1 / 3)
    assert polygon_iou([(0, 0), (1, 0)], [(0, 0), (1, 0)]) == 0.0


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 3), st.floats(0.1, 3))
def test_iou_symmetric(x, y, w1, w2):
    a, b = square(0, 0, w1), square(x, y, w2)
    assert abs(polygon_iou(a, b) - polygon_iou(b, a)) < 1e-12
    assert polygon_iou(a, a) == pytest.approx(1.0)
    assert 0.0 <= polygon_iou(a, b) <= 1.0


def result(ious, rmss, n_est, n_gt):
    return LaneMatchResult(pairs=[(i, i) for i in range(len(ious))], iou=list(ious), rms=list(rmss),
                           n_est=n_est, n_gt=n_gt)


def test_precision_recall_examples():
    assert precision_recall(result([0.9, 0.9], [0.5, 0.5], 2, 2)) == (1.0, 1.0)
    assert precision_recall(result([0.9, 0.8, 0.1], [1, 1, 1], 3, 4)) == (2 / 3, 2 / 4)
    assert precision_recall(result([0.7], [0.25], 1, 1)) == (0.0, 0.0)
    assert precision_recall(result([], [], 0, 0)) == (1.0, 1.0)
    assert precision_recall(result([], [], 0, 3)) == (1.0, 0.0)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 2)), min_size=1, max_size=8), st.integers(0, 4),
       st.floats(0, 1), st.floats(0, 1))
def test_recall_monotone_in_gate(pairs, extra_gt, g1, g2):
    m = result([p[0] for p in pairs], [p[1] for p in pairs], len(pairs), len(pairs) + extra_gt)
    loose, tight = Gate(min(g1, g2), 0.2), Gate(max(g1, g2), 0.2)
    p1, r1 = precision_recall(m, loose)
    p2, r2 = precision_recall(m, tight)
    assert 0 <= p2 <= 1 and 0 <= r2 <= 1 and r2 <= r1


def test_match_is_injective():
    gt_c = [np.array([[0, 0], [10, 0]]), np.array([[0, 3], [10, 3]])]
    gt_p = [[(0, -1.5), (10, -1.5), (10, 1.5), (0, 1.5)], [(0, 1.5), (10, 1.5), (10, 4.5), (0, 4.5)]]
    m = match_lanes(gt_c[:1] * 2, gt_p[:1] * 2, gt_c, gt_p)
    assert len(m.pairs) == 2 and len({i for i, _ in m.pairs}) == len({j for _, j in m.pairs}) == 2
    assert m.pairs[0] == (0, 0) and m.iou[0] == pytest.approx(1.0)


@pytest.fixture(scope="module")
def grid_truth():
    b = scenario("grid4")
    return b, truth_to_document(b.truth, b.skeleton)


def test_self_evaluation(grid_truth):
    b, doc = grid_truth
    rep = evaluate(doc.roads, doc.intersections, b.truth)
    agg = rep["aggregate"]
    assert (agg["precision"], agg["recall"], agg["rms"]) == (1.0, 1.0, 0.0)
    assert agg["miou_per_lane"] == pytest.approx(1.0) and agg["miou_area_weighted"] == pytest.approx(1.0)
    topo = rep["topology"]
    assert topo["precision"] == topo["recall"] == 1.0


def test_deleted_lane_costs_one_over_n(grid_truth):
    b, doc = grid_truth
    roads = copy.deepcopy(doc.roads)
    n = sum(r.K for r in roads.values())
    eid = sorted(roads)[0]
    roads[eid].lanes.pop()
    rep = evaluate(roads, doc.intersections, b.truth)
    assert rep["aggregate"]["recall"] == pytest.approx(1 - 1 / n)
    assert rep["aggregate"]["precision"] == 1.0


def test_offset_lane_rms(grid_truth):
    b, doc = grid_truth
    eid = sorted(doc.roads)[0]
    road = copy.deepcopy(doc.roads[eid])
    ln = road.lanes[0]
    g = b.truth.roads[eid][0].center
    t = g[-1] - g[0]
    n = np.array([-t[1], t[0]]) / np.linalg.norm(t)
    ln.center.waypoints = ln.center.waypoints + 0.2 * n
    rep = evaluate({eid: road}, {}, b.truth)
    assert rep["roads"][eid]["pairs"][0]["rms"] == pytest.approx(0.2, abs=1e-9)


def test_rectified_self_eval_is_identity(grid_truth):
    b, doc = grid_truth
    rep = evaluate(doc.roads, doc.intersections, b.truth, rectify_map=True)
    assert abs(rep["alignment"]["angle"]) < 1e-9 and np.allclose(rep["alignment"]["t"], 0, atol=1e-9)


def test_association_errors(grid_truth):
    b, doc = grid_truth
    road = next(iter(doc.roads.values()))
    with pytest.raises(AssociationError) as exc:
        evaluate({"nope": road}, {}, b.truth)
    assert exc.value.ids == ["nope"]
    c = LaneConnection("x", 0, "y", 0, np.zeros(2), np.zeros(2), np.ones(2), curve=np.zeros((2, 2)))
    with pytest.raises(AssociationError):
        evaluate({}, {"zz": Intersection("zz", [c])}, b.truth)


def test_miou_unmatched_scores_zero():
    m = LaneMatchResult(pairs=[(0, 0)], iou=[0.8], rms=[0.1], inter=[8.0], union=[10.0],
                        unmatched_gt=[1], n_est=1, n_gt=2, gt_area=[9.0, 10.0])
    per, area = miou_scores(m)
    assert per == pytest.approx(0.4) and area == pytest.approx(8 / 20)

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lanecarto.bev_projection import (
    BEVMap,
    BEVPatch,
    CameraModel,
    Pose,
    SemanticFrame,
    SyncError,
    backproject,
    candidate_cells,
    project_flat,
    project_mesh,
)
from lanecarto.delaunay import GroundMesh, build_ground_mesh
from lanecarto.semantics import SemanticClass as C

CAM = CameraModel.forward_facing(fx=300.0, fy=300.0, cx=240.0, cy=180.0, height=1.5)


def frame(code=C.DA_CENTER, t=0.0):
    return SemanticFrame(t, np.full((360, 480), int(code), dtype=np.uint8))


def test_camera_rotation_orthonormal():
    assert np.allclose(CAM.rotation @ CAM.rotation.T, np.eye(3), atol=1e-9)
    with pytest.raises(ValueError):
        CameraModel(-1.0, 300.0, 0.0, 0.0)


def test_frame_codes_validated():
    with pytest.raises(ValueError):
        SemanticFrame(0.0, np.full((4, 4), 11, dtype=np.uint8))


def test_pinhole_oracle_ten_meters_ahead():
    u, v, ok = backproject([[10.0, 0.0, 0.0]], CAM, Pose(0.0, 0.0, 0.0))
    assert ok[0]
    assert u[0] == pytest.approx(240.0, abs=1e-9)
    assert v[0] == pytest.approx(180.0 + 300.0 * 1.5 / 10.0, abs=1e-9)


def test_point_behind_camera_excluded():
    _, _, ok = backproject([[-5.0, 0.0, 0.0]], CAM, Pose(0.0, 0.0, 0.0))
    assert not ok[0]


def test_uniform_frame_votes_everywhere_visible():
    pose = Pose(0.0, 3.0, -2.0, yaw=0.4)
    patch = project_flat(frame(), CAM, pose)
    assert len(patch) > 0
    assert np.all(patch.cls == C.DA_CENTER)
    # every visible window cell votes; cells out of the image are the only ones dropped
    ix, iy, cx, cy = candidate_cells(pose, 0.1, 3.0, 40.0, 15.0)
    u, v, ok = backproject(np.column_stack([cx, cy, np.zeros_like(cx)]), CAM, pose)
    vis = ok & (u >= 0) & (u < 480) & (v >= 0) & (v < 360)
    assert len(patch) == int(vis.sum())


def test_sync_error():
    with pytest.raises(SyncError):
        project_flat(frame(t=0.0), CAM, Pose(0.2, 0.0, 0.0))


def test_flat_mesh_equivalence():
    g = np.mgrid[-5:50:2.0, -20:20:2.0].reshape(2, -1).T
    cloud = np.column_stack([g, np.zeros(len(g))])
    mesh = build_ground_mesh(cloud)
    codes = np.random.default_rng(3).integers(1, 11, (360, 480)).astype(np.uint8)
    fr = SemanticFrame(0.0, codes)
    pose = Pose(0.0, 12.0, 7.0, z=0.0, yaw=1.1)
    a = project_flat(fr, CAM, pose)
    b = project_mesh(fr, CAM, pose, mesh)
    assert np.array_equal(a.ix, b.ix) and np.array_equal(a.iy, b.iy)
    assert int(np.sum(a.cls != b.cls)) == 0


def test_ridge_shifts_rows_upward():
    # a ridge 0.2 m high at 10 m ahead, vehicle frame
    V = np.array([[3.0, -20.0, 0.0], [3.0, 20.0, 0.0], [10.0, -20.0, 0.2], [10.0, 20.0, 0.2],
                  [30.0, -20.0, 0.0], [30.0, 20.0, 0.0]])
    mesh = GroundMesh(V, np.array([[0, 2, 1], [1, 2, 3], [2, 4, 3], [3, 4, 5]]))
    pose = Pose(0.0, 0.0, 0.0)
    pt = np.array([[10.05, 0.05]])
    z = mesh.height_at(pt)[0]
    assert z == pytest.approx(0.2 - 0.05 * 0.2 / 20.0)
    _, v_flat, _ = backproject(np.column_stack([pt, [0.0]]), CAM, pose)
    _, v_mesh, _ = backproject(np.column_stack([pt, [z]]), CAM, pose)
    assert v_mesh[0] < v_flat[0]


def test_cells_outside_mesh_fall_back_to_flat():
    mesh = GroundMesh(np.array([[5.0, -1, 0.3], [6.0, -1, 0.3], [5.0, 1, 0.3]]), np.array([[0, 1, 2]]))
    codes = np.random.default_rng(4).integers(1, 11, (360, 480)).astype(np.uint8)
    fr = SemanticFrame(0.0, codes)
    pose = Pose(0.0, 0.0, 0.0)
    a = project_flat(fr, CAM, pose)
    b = project_mesh(fr, CAM, pose, mesh)
    fa = {(i, j): c for i, j, c in zip(a.ix, a.iy, a.cls)}
    fb = {(i, j): c for i, j, c in zip(b.ix, b.iy, b.cls)}
    off = [k for k in fa if not (50 <= k[0] <= 60 and -10 <= k[1] <= 10)]
    assert all(fa[k] == fb.get(k) for k in off)


@given(st.floats(3.5, 39.0), st.floats(-8.0, 8.0), st.floats(-math.pi, math.pi))
def test_projection_consistency(fwd, lat, yaw):
    pose = Pose(0.0, 5.0, -3.0, z=0.0, yaw=yaw)
    c, s = math.cos(yaw), math.sin(yaw)
    p = np.array([5.0 + c * fwd - s * lat, -3.0 + s * fwd + c * lat, 0.0])
    u, v, ok = backproject([p], CAM, pose)
    assert ok[0]
    # cast the ray through (u, v) back onto z = 0
    d_cam = np.array([(u[0] - CAM.cx) / CAM.fx, (v[0] - CAM.cy) / CAM.fy, 1.0])
    Rw = pose.rotation()
    origin = pose.position + Rw @ CAM.translation
    d = Rw @ (CAM.rotation @ d_cam)
    hit = origin + d * (-origin[2] / d[2])
    assert np.hypot(*(hit[:2] - p[:2])) < 0.1


def patch(cells, code):
    cells = np.asarray(cells)
    return BEVPatch(cells[:, 0], cells[:, 1], np.full(len(cells), int(code), dtype=np.uint8))


def test_single_patch_labels():
    m = BEVMap(0.1).accumulate(patch([[3, 4], [5, 4]], C.LM_SOLID))
    lab, inside = m.lookup([[0.35, 0.45], [0.55, 0.45], [0.45, 0.45]])
    assert inside.all()
    assert list(lab) == [C.LM_SOLID, C.LM_SOLID, C.UNKNOWN]


def test_majority_and_tie_break():
    m = BEVMap(0.1)
    for _ in range(3):
        m.accumulate(patch([[0, 0]], C.DA_CENTER))
    for _ in range(2):
        m.accumulate(patch([[0, 0]], C.DA_LEFT))
    assert m.lookup([[0.05, 0.05]])[0][0] == C.DA_CENTER
    t = BEVMap(0.1)
    for _ in range(2):
        t.accumulate(patch([[0, 0]], C.LM_SOLID))
        t.accumulate(patch([[0, 0]], C.DA_CENTER))
    assert t.lookup([[0.05, 0.05]])[0][0] == C.LM_SOLID


def test_auto_grow_by_tiles():
    m = BEVMap(0.1, tile=64)
    m.accumulate(patch([[0, 0]], C.CURB)).accumulate(patch([[-200, 300]], C.CURB))
    ny, nx = m.shape
    assert nx % 64 == 0 and ny % 64 == 0
    assert m.lookup([[-19.95, 30.05]])[0][0] == C.CURB
    assert m.lookup([[0.05, 0.05]])[0][0] == C.CURB


@given(st.lists(st.tuples(st.integers(-30, 30), st.integers(-30, 30), st.integers(1, 10)),
                min_size=1, max_size=40), st.integers(1, 6))
def test_vote_conservation(cells, k):
    m = BEVMap(0.1)
    total = 0
    for j in range(k):
        sub = cells[j::k] or cells[:1]
        P = np.array(sub)
        m.accumulate(BEVPatch(P[:, 0], P[:, 1], P[:, 2].astype(np.uint8)))
        total += len(sub)
    assert m.total_votes() == total


@given(st.integers(1, 10), st.integers(1, 5), st.integers(1, 10))
def test_label_monotonicity(code_a, n_a, code_b):
    m = BEVMap(0.1)
    for _ in range(n_a + 1):
        m.accumulate(patch([[0, 0]], code_a))
    before = m.lookup([[0.05, 0.05]])[0][0]
    if code_b != code_a:
        for _ in range(n_a):
            m.accumulate(patch([[0, 0]], code_b))
    assert m.lookup([[0.05, 0.05]])[0][0] == before


def test_crop_preserves_labels():
    m = BEVMap(0.1).accumulate(patch([[i, j] for i in range(20) for j in range(20)], C.DA_RIGHT))
    c = m.crop(0.5, 1.0, 0.5, 1.0)
    assert c.lookup([[0.75, 0.75]])[0][0] == C.DA_RIGHT
    assert not c.lookup([[0.05, 0.05]])[1][0]

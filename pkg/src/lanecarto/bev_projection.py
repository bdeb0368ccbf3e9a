"""Inverse-perspective projection of semantic frames into a voting BEV grid.

Each BEV cell center is placed on the ground (a horizontal plane at the
vehicle's height, or a LIDAR ground mesh) and back-projected into the image;
the cell takes the class of the pixel it lands on. Per-cell votes are
accumulated across frames and resolved by majority.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .delaunay import GroundMesh
from .semantics import NUM_CLASSES, SemanticClass

DEFAULT_CELL = 0.1
SYNC_TOLERANCE = 0.05


class SyncError(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    timestamp: float
    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def rotation(self) -> np.ndarray:
        """Vehicle-to-map rotation, ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
        return rotation_zyx(self.yaw, self.pitch, self.roll)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


def rotation_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return Rz @ Ry @ Rx


# Optical frame (x right, y down, z forward) expressed in the vehicle frame
# (x forward, y left, z up).
CAM_TO_VEHICLE_LEVEL = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: CAM_TO_VEHICLE_LEVEL.copy())
    translation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.5]))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3))) > 1e-9:
            raise ValueError("camera rotation is not orthonormal")

    @classmethod
    def forward_facing(cls, fx=300.0, fy=300.0, cx=240.0, cy=180.0, height=1.5, pitch=0.0):
        """Camera on the vehicle's x axis at ``height``, tilted down by ``pitch``."""
        tilt = rotation_zyx(0.0, pitch, 0.0)
        return cls(fx, fy, cx, cy, tilt @ CAM_TO_VEHICLE_LEVEL, np.array([0.0, 0.0, height]))

    @property
    def height(self) -> float:
        return float(self.translation[2])

    def extrinsic_rows(self) -> list[float]:
        M = np.hstack([self.rotation, self.translation[:, None]])
        return [float(v) for v in M.ravel()]


@dataclass
class SemanticFrame:
    timestamp: float
    codes: np.ndarray  # (height, width) uint8 class codes

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.uint8)
        if self.codes.ndim != 2:
            raise ValueError("frame codes must be a 2D array")
        if self.codes.size and int(self.codes.max()) >= NUM_CLASSES:
            raise ValueError("frame contains class codes >= 11")

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    @property
    def width(self) -> int:
        return self.codes.shape[1]


@dataclass
class BEVPatch:
    """Global cell indices and the class each cell votes for."""

    ix: np.ndarray
    iy: np.ndarray
    cls: np.ndarray

    def __len__(self) -> int:
        return len(self.ix)


class BEVMap:
    """Georeferenced per-cell class vote counts.

    Cell ``(ix, iy)`` covers ``[ix*cs, (ix+1)*cs) x [iy*cs, (iy+1)*cs)`` in the
    map frame; the stored window starts at global index ``(ix0, iy0)``. The
    window grows by whole tiles when a patch falls outside it.
    """

    def __init__(self, cell_size: float = DEFAULT_CELL, tile: int = 64):
        self.cell_size = float(cell_size)
        self.tile = int(tile)
        self.ix0 = 0
        self.iy0 = 0
        self.votes = np.zeros((0, 0, NUM_CLASSES), dtype=np.uint16)
        self._labels: np.ndarray | None = None

    @classmethod
    def from_labels(cls, labels, ix0: int, iy0: int, cell_size: float = DEFAULT_CELL) -> "BEVMap":
        """One vote per cell for its label; UNKNOWN cells get no votes."""
        lab = np.asarray(labels, dtype=np.uint8)
        m = cls(cell_size)
        m.ix0, m.iy0 = int(ix0), int(iy0)
        m.votes = np.zeros(lab.shape + (NUM_CLASSES,), dtype=np.uint16)
        iy, ix = np.nonzero(lab)
        m.votes[iy, ix, lab[iy, ix]] = 1
        return m

    @property
    def shape(self) -> tuple[int, int]:
        return self.votes.shape[:2]

    @property
    def origin(self) -> tuple[float, float]:
        return self.ix0 * self.cell_size, self.iy0 * self.cell_size

    @property
    def extent(self) -> tuple[float, float, float, float]:
        ny, nx = self.shape
        x0, y0 = self.origin
        return x0, x0 + nx * self.cell_size, y0, y0 + ny * self.cell_size

    def total_votes(self) -> int:
        return int(self.votes.sum(dtype=np.int64))

    def cell_index(self, xy) -> tuple[np.ndarray, np.ndarray]:
        q = np.atleast_2d(np.asarray(xy, dtype=float))
        return (np.floor(q[:, 0] / self.cell_size).astype(np.int64),
                np.floor(q[:, 1] / self.cell_size).astype(np.int64))

    def _ensure(self, ixmin: int, ixmax: int, iymin: int, iymax: int) -> None:
        ny, nx = self.shape
        if nx and ny and ixmin >= self.ix0 and iymin >= self.iy0 \
                and ixmax < self.ix0 + nx and iymax < self.iy0 + ny:
            return
        t = self.tile
        if nx and ny:
            ixmin, iymin = min(ixmin, self.ix0), min(iymin, self.iy0)
            ixmax, iymax = max(ixmax, self.ix0 + nx - 1), max(iymax, self.iy0 + ny - 1)
        nix0 = (ixmin // t) * t
        niy0 = (iymin // t) * t
        nnx = ((ixmax - nix0) // t + 1) * t
        nny = ((iymax - niy0) // t + 1) * t
        grown = np.zeros((nny, nnx, NUM_CLASSES), dtype=self.votes.dtype)
        if nx and ny:
            oy, ox = self.iy0 - niy0, self.ix0 - nix0
            grown[oy:oy + ny, ox:ox + nx] = self.votes
        self.votes, self.ix0, self.iy0 = grown, nix0, niy0

    def accumulate(self, patch: BEVPatch) -> "BEVMap":
        if len(patch) == 0:
            return self
        self._ensure(int(patch.ix.min()), int(patch.ix.max()), int(patch.iy.min()), int(patch.iy.max()))
        ny, nx = self.shape
        flat = ((patch.iy - self.iy0) * nx + (patch.ix - self.ix0)) * NUM_CLASSES + patch.cls
        nz, counts = np.unique(flat, return_counts=True)
        v = self.votes.reshape(-1)
        v[nz] = v[nz] + counts.astype(v.dtype)
        self._labels = None
        return self

    @property
    def labels(self) -> np.ndarray:
        """Resolved label per cell: vote argmax, ties to the higher class code."""
        if self._labels is None:
            v = self.votes
            if v.size == 0:
                self._labels = np.zeros(self.shape, dtype=np.uint8)
            else:
                top = (NUM_CLASSES - 1) - np.argmax(v[..., ::-1], axis=-1)
                top[v.sum(axis=-1) == 0] = SemanticClass.UNKNOWN
                self._labels = top.astype(np.uint8)
        return self._labels

    def lookup(self, xy) -> tuple[np.ndarray, np.ndarray]:
        """(labels, inside-window mask) for map-frame points."""
        ix, iy = self.cell_index(xy)
        ny, nx = self.shape
        jx, jy = ix - self.ix0, iy - self.iy0
        inside = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)
        out = np.zeros(len(ix), dtype=np.uint8)
        out[inside] = self.labels[jy[inside], jx[inside]]
        return out, inside

    def crop(self, xmin: float, xmax: float, ymin: float, ymax: float) -> "BEVMap":
        cs = self.cell_size
        ny, nx = self.shape
        jx0 = max(int(math.floor(xmin / cs)) - self.ix0, 0)
        jx1 = min(int(math.floor(xmax / cs)) - self.ix0 + 1, nx)
        jy0 = max(int(math.floor(ymin / cs)) - self.iy0, 0)
        jy1 = min(int(math.floor(ymax / cs)) - self.iy0 + 1, ny)
        out = BEVMap(cs, self.tile)
        out.ix0, out.iy0 = self.ix0 + jx0, self.iy0 + jy0
        out.votes = self.votes[jy0:max(jy1, jy0), jx0:max(jx1, jx0)].copy()
        return out


def accumulate(bev: BEVMap, patch: BEVPatch) -> BEVMap:
    return bev.accumulate(patch)


def _check_sync(frame: SemanticFrame, pose: Pose, tol: float) -> None:
    if abs(frame.timestamp - pose.timestamp) > tol:
        raise SyncError(
            f"frame t={frame.timestamp:.3f}s and pose t={pose.timestamp:.3f}s differ by more than {tol}s"
        )


def candidate_cells(pose: Pose, cell_size: float, near: float, far: float, lateral: float):
    """Global cell indices and centers inside the forward viewing window."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    corners = np.array([[near, -lateral], [near, lateral], [far, -lateral], [far, lateral]])
    wx = pose.x + c * corners[:, 0] - s * corners[:, 1]
    wy = pose.y + s * corners[:, 0] + c * corners[:, 1]
    ix = np.arange(int(math.floor(wx.min() / cell_size)), int(math.floor(wx.max() / cell_size)) + 1)
    iy = np.arange(int(math.floor(wy.min() / cell_size)), int(math.floor(wy.max() / cell_size)) + 1)
    IX, IY = np.meshgrid(ix, iy)
    IX, IY = IX.ravel(), IY.ravel()
    cxs = (IX + 0.5) * cell_size
    cys = (IY + 0.5) * cell_size
    dx, dy = cxs - pose.x, cys - pose.y
    fwd = c * dx + s * dy
    lat = -s * dx + c * dy
    keep = (fwd >= near) & (fwd <= far) & (np.abs(lat) <= lateral)
    return IX[keep], IY[keep], cxs[keep], cys[keep]


def backproject(points_map, cam: CameraModel, pose: Pose):
    """Pixel coordinates (u, v) and a validity mask for map-frame 3D points."""
    P = np.atleast_2d(np.asarray(points_map, dtype=float))
    pv = (P - pose.position) @ pose.rotation()  # R^T (p - t), row-vector form
    pc = (pv - cam.translation) @ cam.rotation
    zc = pc[:, 2]
    valid = zc > 1e-6
    zs = np.where(valid, zc, 1.0)
    u = cam.fx * pc[:, 0] / zs + cam.cx
    v = cam.fy * pc[:, 1] / zs + cam.cy
    return u, v, valid


def _project(frame, cam, pose, ix, iy, cx, cy, gz) -> BEVPatch:
    u, v, valid = backproject(np.column_stack([cx, cy, gz]), cam, pose)
    col = np.floor(u)
    row = np.floor(v)
    valid &= (col >= 0) & (col < frame.width) & (row >= 0) & (row < frame.height)
    cls = np.zeros(len(ix), dtype=np.uint8)
    cls[valid] = frame.codes[row[valid].astype(np.int64), col[valid].astype(np.int64)]
    keep = valid & (cls != SemanticClass.UNKNOWN)
    return BEVPatch(ix[keep], iy[keep], cls[keep])


def project_flat(
    frame: SemanticFrame,
    cam: CameraModel,
    pose: Pose,
    cell_size: float = DEFAULT_CELL,
    near: float = 3.0,
    far: float = 40.0,
    lateral: float = 15.0,
    sync_tol: float = SYNC_TOLERANCE,
) -> BEVPatch:
    """Project assuming a horizontal ground plane at the vehicle's height."""
    _check_sync(frame, pose, sync_tol)
    ix, iy, cx, cy = candidate_cells(pose, cell_size, near, far, lateral)
    gz = np.full(len(ix), pose.z)
    return _project(frame, cam, pose, ix, iy, cx, cy, gz)


def project_mesh(
    frame: SemanticFrame,
    cam: CameraModel,
    pose: Pose,
    mesh: GroundMesh,
    cell_size: float = DEFAULT_CELL,
    near: float = 3.0,
    far: float = 40.0,
    lateral: float = 15.0,
    sync_tol: float = SYNC_TOLERANCE,
) -> BEVPatch:
    """Project onto a vehicle-frame ground mesh; cells off the mesh use the flat plane."""
    _check_sync(frame, pose, sync_tol)
    ix, iy, cx, cy = candidate_cells(pose, cell_size, near, far, lateral)
    world = mesh.transformed(pose.rotation(), pose.position)
    gz = world.height_at(np.column_stack([cx, cy]))
    gz = np.where(np.isnan(gz), pose.z, gz)
    return _project(frame, cam, pose, ix, iy, cx, cy, gz)

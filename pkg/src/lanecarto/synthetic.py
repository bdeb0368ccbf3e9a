"""Synthetic road scenes with exact ground truth.

A scenario is a set of corridors (one per skeleton way). Each corridor
carries lane ribbons described in its own axis frame ``(s, d)``; the label
raster is drawn from the lateral layout of the ribbons: drivable cells
inside ribbons, paint within 0.2 m outside them, then an unlabeled shoulder
and a curb. Optional per-frame camera images are rendered by casting rays
against the true ground surface.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .bev_projection import BEVMap, CameraModel, Pose, SemanticFrame
from .geometry import cumulative_length, points_in_polygon
from .io import write_bev_png, write_camera, write_cloud, write_frame, write_poses
from .skeleton import RawRoadNetwork, SkeletonMap, Way, build_skeleton
from .semantics import NUM_CLASSES, SemanticClass
from .truth import GroundTruth, TruthConnection, TruthLane

LAYOUTS = ("straight", "curved", "fork", "merge", "narrow", "grid4", "star6")
MARKING_STYLES = ("solid", "dashed", "none")
MARK_W = 0.2
SHOULDER_W = 0.6
CURB_W = 0.2
ROI_NODE_DIST = {"grid4": 8.0, "star6": 12.0}
FRAME_W, FRAME_H = 480, 360


class SpecError(ValueError):
    pass


@dataclass
class ScenarioSpec:
    layout: str = "straight"
    length: float = 100.0  # straight/fork/merge/narrow road length; arc length for curved
    radius: float = 60.0  # curved
    fork_angle: float = 0.3  # fork/merge: full divergence angle (rad)
    fork_position: float = 50.0  # fork/merge: station of the split or join (m)
    narrow_width: float = 2.5  # narrow: lane width inside the narrowed section
    block: float = 60.0  # grid4/star6: arm length (m)
    lanes_per_direction: int = 1
    two_way: bool | None = None  # default: True for grid4/star6, False otherwise
    lane_width: float = 3.0
    edge_marking: str = "solid"
    divider_marking: str = "dashed"
    center_marking: str = "solid"
    dropout: float = 0.0
    topography: str = "flat"  # flat | sine
    amplitude: float = 0.2
    wavelength: float = 30.0
    flip_rate: float = 0.0
    frames: bool = False
    pose_spacing: float = 2.0
    cell_size: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.two_way is None:
            self.two_way = self.layout in ("grid4", "star6")

    def validate(self) -> None:
        if self.layout not in LAYOUTS:
            raise SpecError(f"unknown layout {self.layout!r}; expected one of {', '.join(LAYOUTS)}")
        if not 2.0 <= self.lane_width <= 5.0:
            raise SpecError("lane_width must lie in [2, 5] m")
        if not 0.0 <= self.dropout <= 1.0:
            raise SpecError("dropout must lie in [0, 1]")
        if not 0.0 <= self.flip_rate <= 0.2:
            raise SpecError("flip_rate must lie in [0, 0.2]")
        if self.topography not in ("flat", "sine"):
            raise SpecError("topography must be 'flat' or 'sine'")
        for name in ("edge_marking", "divider_marking", "center_marking"):
            if getattr(self, name) not in MARKING_STYLES:
                raise SpecError(f"{name} must be one of {', '.join(MARKING_STYLES)}")
        if self.lanes_per_direction < 1 or self.lanes_per_direction > 3:
            raise SpecError("lanes_per_direction must be 1..3")
        if self.layout in ("fork", "merge"):
            if self.two_way or self.lanes_per_direction != 1:
                raise SpecError(f"{self.layout} supports one-way single-lane roads only")
            if not 0.0 < self.fork_angle < 1.0:
                raise SpecError("fork_angle must lie in (0, 1) rad")
            if not 10.0 <= self.fork_position <= self.length - 30.0:
                raise SpecError("fork_position must leave 10 m before and 30 m after the split")
        if self.layout in ("grid4", "star6") and not self.two_way:
            raise SpecError(f"{self.layout} requires two-way roads")
        if self.layout == "narrow" and not 2.0 <= self.narrow_width <= self.lane_width:
            raise SpecError("narrow_width must lie in [2, lane_width]")
        if self.layout == "curved" and self.radius < 15.0:
            raise SpecError("radius must be at least 15 m")
        if self.layout in ("grid4", "star6") and self.block < 2.0 * ROI_NODE_DIST[self.layout]:
            raise SpecError("block too short for the intersection area")
        if self.length < 40.0:
            raise SpecError("length must be at least 40 m")
        if self.amplitude < 0 or self.wavelength <= 0:
            raise SpecError("amplitude must be >= 0 and wavelength > 0")
        if not self.cell_size > 0 or not self.pose_spacing > 0:
            raise SpecError("cell_size and pose_spacing must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise SpecError(f"unknown spec keys: {', '.join(extra)}")
        spec = cls(**d)
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def marking_cells_expected(self) -> bool:
        return self.edge_marking != "none"


# ---------------------------------------------------------------- geometry


@dataclass
class Ribbon:
    """One lane inside a corridor: lateral center ``d = center(s)``, half-width ``half(s)``."""

    group: int
    direction: int  # +1 drives along the corridor axis, -1 against it
    center: Callable[[np.ndarray], np.ndarray]
    half: Callable[[np.ndarray], np.ndarray]
    s0: float = 0.0
    s1: float = math.inf


@dataclass
class Corridor:
    way_id: str
    node_ids: list[str]
    axis: np.ndarray  # dense polyline (map frame)
    ribbons: list[Ribbon]

    @property
    def length(self) -> float:
        return float(cumulative_length(self.axis)[-1])

    def frame_at(self, s):
        """Axis points and left unit normals at stations ``s``."""
        s = np.asarray(s, dtype=float)
        cum = cumulative_length(self.axis)
        seg = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(self.axis) - 2)
        a, b = self.axis[seg], self.axis[seg + 1]
        ab = b - a
        L = np.hypot(ab[:, 0], ab[:, 1])
        u = ((s - cum[seg]) / L)[:, None]
        t = ab / L[:, None]
        return a + u * ab, np.column_stack([-t[:, 1], t[:, 0]])

    def extent(self) -> float:
        probe = np.linspace(0.0, self.length, 64)
        m = 0.0
        for r in self.ribbons:
            m = max(m, float(np.max(np.abs(r.center(probe)) + r.half(probe))))
        return m + MARK_W + SHOULDER_W + CURB_W


def _const(v):
    return lambda s: np.full(np.shape(s), float(v))


def _lateral_layout(spec: ScenarioSpec) -> list[tuple[int, int, float]]:
    """(group, direction, center offset) for the lanes of a regular corridor."""
    w, n = spec.lane_width, spec.lanes_per_direction
    pitch = w + MARK_W
    out = []
    if spec.two_way:
        for k in range(n):
            out.append((0, +1, -(MARK_W / 2 + w / 2 + k * pitch)))
        for k in range(n):
            out.append((1, -1, +(MARK_W / 2 + w / 2 + k * pitch)))
    else:
        for k in range(n):
            out.append((0, +1, ((n - 1) / 2 - k) * pitch))
    return out


def _regular_ribbons(spec: ScenarioSpec, half=None) -> list[Ribbon]:
    half = half or _const(spec.lane_width / 2)
    return [Ribbon(g, dr, _const(c), half) for g, dr, c in _lateral_layout(spec)]


def _line(p0, p1, step: float = 0.5) -> np.ndarray:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(int(math.ceil(np.hypot(*(p1 - p0)) / step)), 1)
    return p0 + np.linspace(0.0, 1.0, n + 1)[:, None] * (p1 - p0)


def _layout(spec: ScenarioSpec) -> tuple[RawRoadNetwork, list[Corridor]]:
    L = spec.length
    nodes: dict[str, tuple[float, float]] = {}
    ways: list[Way] = []
    cors: list[Corridor] = []
    oneway = not spec.two_way

    if spec.layout in ("straight", "narrow", "fork", "merge"):
        nodes = {"a": (0.0, 0.0), "b": (L, 0.0)}
        ways = [Way("w0", ["a", "b"], oneway)]
        axis = _line((0.0, 0.0), (L, 0.0))
        if spec.layout == "straight":
            ribbons = _regular_ribbons(spec)
        elif spec.layout == "narrow":
            w0, w1 = spec.lane_width / 2, spec.narrow_width / 2
            a, b, ramp = 0.4 * L, 0.6 * L, 5.0

            def half(s, w0=w0, w1=w1, a=a, b=b, ramp=ramp):
                s = np.asarray(s, dtype=float)
                f = np.clip(np.minimum(s - (a - ramp), (b + ramp) - s) / ramp, 0.0, 1.0)
                return w0 + (w1 - w0) * f

            ribbons = _regular_ribbons(spec, half)
        else:
            P, k = spec.fork_position, math.tan(spec.fork_angle / 2)
            sep = (spec.lane_width + MARK_W) / 2 + 0.4  # gore leaves a solid-unknown-solid island

            def branch(sign, fork=spec.layout == "fork"):
                def c(s):
                    s = np.asarray(s, dtype=float)
                    x = (s - P) if fork else (P - s)
                    return sign * np.clip(k * x, 0.0, sep)
                return c

            hw = _const(spec.lane_width / 2)
            ribbons = [Ribbon(0, +1, branch(+1), hw), Ribbon(1, +1, branch(-1), hw)]
        cors.append(Corridor("w0", ["a", "b"], axis, ribbons))

    elif spec.layout == "curved":
        R = spec.radius
        theta = L / R
        # arc starting at the origin heading +x, turning left about (0, R)
        ang = np.linspace(0.0, theta, max(int(math.ceil(L / 0.5)), 2) + 1)
        axis = np.column_stack([R * np.sin(ang), R - R * np.cos(ang)])
        n_nodes = max(int(math.ceil(L / 10.0)), 2)
        ids = []
        for i, a in enumerate(np.linspace(0.0, theta, n_nodes + 1)):
            nid = f"c{i}"
            nodes[nid] = (float(R * math.sin(a)), float(R - R * math.cos(a)))
            ids.append(nid)
        ways = [Way("w0", ids, oneway)]
        cors.append(Corridor("w0", [ids[0], ids[-1]], axis, _regular_ribbons(spec)))

    else:
        n_arms = 4 if spec.layout == "grid4" else 6
        r_node = ROI_NODE_DIST[spec.layout]
        nodes["o"] = (0.0, 0.0)
        for i in range(n_arms):
            b = 2.0 * math.pi * i / n_arms
            u = np.array([math.cos(b), math.sin(b)])
            nodes[f"m{i}"] = tuple(float(v) for v in np.round(r_node * u, 9))
            nodes[f"e{i}"] = tuple(float(v) for v in np.round(spec.block * u, 9))
            ways.append(Way(f"w{i}", ["o", f"m{i}", f"e{i}"], False))
            axis = _line((0.0, 0.0), np.array(nodes[f"e{i}"]))
            cors.append(Corridor(f"w{i}", ["o", f"e{i}"], axis, _regular_ribbons(spec)))
    return RawRoadNetwork(nodes, ways), cors


def terrain_height(xy, spec: ScenarioSpec) -> np.ndarray:
    q = np.atleast_2d(np.asarray(xy, dtype=float))
    if spec.topography != "sine" or spec.amplitude == 0:
        return np.zeros(len(q))
    return spec.amplitude * np.sin(2.0 * math.pi * q[:, 0] / spec.wavelength)


def terrain_gradient(xy, spec: ScenarioSpec) -> np.ndarray:
    q = np.atleast_2d(np.asarray(xy, dtype=float))
    g = np.zeros_like(q)
    if spec.topography == "sine" and spec.amplitude != 0:
        k = 2.0 * math.pi / spec.wavelength
        g[:, 0] = spec.amplitude * k * np.cos(k * q[:, 0])
    return g


# ---------------------------------------------------------------- raster

_PRIO_NONE, _PRIO_SHOULDER, _PRIO_CURB, _PRIO_MARK, _PRIO_DA = 0, 1, 2, 3, 4


def _style_class(style: str, between: bool) -> tuple[int, int]:
    if style == "solid":
        return SemanticClass.LM_SOLID, _PRIO_MARK
    if style == "dashed":
        return SemanticClass.LM_DASHED, _PRIO_MARK
    if between:
        return SemanticClass.DA_CENTER, _PRIO_DA
    return SemanticClass.UNKNOWN, _PRIO_SHOULDER


def _dropout_mask(s, length: float, p: float, rng) -> np.ndarray:
    """True where paint is removed: alternating removed/kept runs along ``s``."""
    if p <= 0:
        return np.zeros(len(s), dtype=bool)
    if p >= 1:
        return np.ones(len(s), dtype=bool)
    starts, ends = [], []
    pos = -rng.uniform(0.0, 3.0 / p)
    while pos < length + 1.0:
        r = rng.uniform(1.0, 3.0)
        starts.append(pos)
        ends.append(pos + r)
        pos += r + r * (1.0 - p) / p
    starts, ends = np.asarray(starts), np.asarray(ends)
    k = np.searchsorted(starts, s, side="right") - 1
    return (k >= 0) & (s < ends[np.maximum(k, 0)])


def _project_dense(P, axis, max_dist):
    """Projection onto a densely sampled polyline, testing only the segments
    next to the nearest vertex. Returns (dist, arclength, seg) for points
    within ``max_dist`` plus the boolean selection mask."""
    step = float(np.max(np.hypot(*np.diff(axis, axis=0).T)))
    _, k = cKDTree(axis).query(P, distance_upper_bound=max_dist + step)
    sel = k < len(axis)
    P, k = P[sel], k[sel]
    cum = cumulative_length(axis)
    best_d = np.full(len(P), np.inf)
    best_s = np.zeros(len(P))
    best_g = np.zeros(len(P), dtype=np.int64)
    for off in (-1, 0):
        g = np.clip(k + off, 0, len(axis) - 2)
        a, b = axis[g], axis[g + 1]
        ab = b - a
        L2 = (ab * ab).sum(axis=1)
        u = np.clip(((P - a) * ab).sum(axis=1) / L2, 0.0, 1.0)
        foot = a + u[:, None] * ab
        d = np.hypot(*(P - foot).T)
        better = d < best_d
        best_d[better] = d[better]
        best_s[better] = cum[g[better]] + u[better] * np.sqrt(L2[better])
        best_g[better] = g[better]
    return best_d, best_s, best_g, sel


def _corridor_cells(cor: Corridor, spec: ScenarioSpec, ix0, iy0, shape, rng):
    """(flat cell indices, class, priority) drawn by one corridor."""
    cs = spec.cell_size
    ny, nx = shape
    ext = cor.extent()
    lo = cor.axis.min(axis=0) - ext
    hi = cor.axis.max(axis=0) + ext
    jx = np.arange(max(int(math.floor(lo[0] / cs)) - ix0, 0), min(int(math.floor(hi[0] / cs)) - ix0 + 1, nx))
    jy = np.arange(max(int(math.floor(lo[1] / cs)) - iy0, 0), min(int(math.floor(hi[1] / cs)) - iy0 + 1, ny))
    JX, JY = np.meshgrid(jx, jy)
    JX, JY = JX.ravel(), JY.ravel()
    P = np.column_stack([(JX + ix0 + 0.5) * cs, (JY + iy0 + 0.5) * cs])
    dist, s, seg, sel = _project_dense(P, cor.axis, ext)
    P, JX, JY = P[sel], JX[sel], JY[sel]
    L = cor.length
    keep = (s > 1e-9) & (s < L - 1e-9) & (dist <= ext)
    P, s, seg, dist, JX, JY = P[keep], s[keep], seg[keep], dist[keep], JX[keep], JY[keep]
    a, b = cor.axis[seg], cor.axis[seg + 1]
    side = np.sign((b[:, 0] - a[:, 0]) * (P[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (P[:, 0] - a[:, 0]))
    d = side * dist

    R = len(cor.ribbons)
    C = np.empty((R, len(s)))
    e = np.empty((R, len(s)))
    for i, r in enumerate(cor.ribbons):
        C[i] = r.center(s)
        e[i] = np.abs(d - C[i]) - r.half(s)
        e[i, (s < r.s0) | (s > r.s1)] = np.inf
    emin = e.min(axis=0)
    cls = np.zeros(len(s), dtype=np.int64)
    prio = np.zeros(len(s), dtype=np.int64)

    da = emin < 0
    cls[da], prio[da] = SemanticClass.DA_CENTER, _PRIO_DA

    mark = ~da & (emin < MARK_W)
    near = (e >= 0) & (e < MARK_W)
    above = near & (d > C)
    below = near & (d < C)
    between = mark & above.any(axis=0) & below.any(axis=0)
    if between.any():
        # group of the nearest ribbon on each side
        ea = np.where(above, e, np.inf)
        eb = np.where(below, e, np.inf)
        ga = np.array([r.group for r in cor.ribbons])[np.argmin(ea, axis=0)]
        gb = np.array([r.group for r in cor.ribbons])[np.argmin(eb, axis=0)]
        same = ga == gb
        for sel, style in ((between & same, spec.divider_marking), (between & ~same, spec.center_marking)):
            c, p = _style_class(style, True)
            cls[sel], prio[sel] = c, p
    edge = mark & ~between
    c, p = _style_class(spec.edge_marking, False)
    cls[edge], prio[edge] = c, p

    painted = mark & ((cls == SemanticClass.LM_SOLID) | (cls == SemanticClass.LM_DASHED))
    if spec.dropout > 0 and painted.any():
        drop = np.zeros(len(s), dtype=bool)
        for sgn in (-1, 1):
            sel = painted & ((d >= 0) if sgn > 0 else (d < 0))
            drop[sel] = _dropout_mask(s[sel], L, spec.dropout, rng)
        cls[drop], prio[drop] = SemanticClass.UNKNOWN, _PRIO_SHOULDER

    shoulder = ~da & ~mark & (emin < MARK_W + SHOULDER_W)
    cls[shoulder], prio[shoulder] = SemanticClass.UNKNOWN, _PRIO_SHOULDER
    curb = ~da & ~mark & ~shoulder & (emin < MARK_W + SHOULDER_W + CURB_W)
    cls[curb], prio[curb] = SemanticClass.CURB, _PRIO_CURB
    drawn = prio > _PRIO_NONE
    return (JY * nx + JX)[drawn], cls[drawn], prio[drawn]


def rasterize(cors: list[Corridor], spec: ScenarioSpec, rng, margin: float = 2.0):
    """Label raster and its georeference (ix0, iy0)."""
    cs = spec.cell_size
    lo = np.min([c.axis.min(axis=0) - c.extent() for c in cors], axis=0) - margin
    hi = np.max([c.axis.max(axis=0) + c.extent() for c in cors], axis=0) + margin
    ix0, iy0 = int(math.floor(lo[0] / cs)), int(math.floor(lo[1] / cs))
    nx = int(math.floor(hi[0] / cs)) - ix0 + 1
    ny = int(math.floor(hi[1] / cs)) - iy0 + 1
    key = np.zeros(ny * nx, dtype=np.int64)  # priority * 16 + class
    for cor in cors:
        idx, cls, prio = _corridor_cells(cor, spec, ix0, iy0, (ny, nx), rng)
        np.maximum.at(key, idx, prio * 16 + cls)
    labels = (key % 16).astype(np.uint8).reshape(ny, nx)
    return labels, ix0, iy0


def corrupt(bev: BEVMap, flip_rate: float, seed: int = 0) -> BEVMap:
    """Flip each cell's label to a uniformly random other class with probability ``flip_rate``."""
    if not 0.0 <= flip_rate <= 0.2:
        raise SpecError("flip_rate must lie in [0, 0.2]")
    labels = bev.labels.copy()
    if flip_rate > 0:
        rng = np.random.default_rng(seed)
        flip = rng.random(labels.shape) < flip_rate
        shift = rng.integers(1, NUM_CLASSES, size=labels.shape)
        labels[flip] = ((labels[flip].astype(np.int64) + shift[flip]) % NUM_CLASSES).astype(np.uint8)
    return BEVMap.from_labels(labels, bev.ix0, bev.iy0, bev.cell_size)


# ---------------------------------------------------------------- truth


def _ribbon_polylines(cor: Corridor, r: Ribbon, step: float = 0.5):
    """Center, left and right boundary polylines in the ribbon's driving direction."""
    s0, s1 = max(r.s0, 0.0), min(r.s1, cor.length)
    n = max(int(math.ceil((s1 - s0) / step)), 1)
    s = np.linspace(s0, s1, n + 1)
    base, nrm = cor.frame_at(s)
    c, h = r.center(s)[:, None], r.half(s)[:, None]
    center = base + c * nrm
    up, down = base + (c + h) * nrm, base + (c - h) * nrm
    if r.direction > 0:
        return center, up, down
    return center[::-1], down[::-1], up[::-1]


def _clip_outside(polys, rois) -> tuple[np.ndarray, ...] | None:
    """Longest run of samples outside every ROI, applied to parallel polylines."""
    center = polys[0]
    outside = np.ones(len(center), dtype=bool)
    for roi in rois:
        outside &= ~points_in_polygon(center, roi.points)
    if not outside.any():
        return None
    best, cur, best_rng = 0, 0, (0, 0)
    for i, o in enumerate(outside):
        cur = cur + 1 if o else 0
        if cur > best:
            best, best_rng = cur, (i - cur + 1, i + 1)
    a, b = best_rng
    if b - a < 2:
        return None
    return tuple(p[a:b] for p in polys)


def _edge_ids(cor: Corridor, two_way: bool) -> dict[int, str]:
    a, b = cor.node_ids[0], cor.node_ids[-1]
    out = {+1: f"{a}>{b}"}
    if two_way:
        out[-1] = f"{b}>{a}"
    return out


def _order_key(center: np.ndarray, edge_poly) -> float:
    p = np.asarray(edge_poly, dtype=float)
    dx, dy = p[-1] - p[0]
    L = math.hypot(dx, dy)
    n = np.array([-dy, dx]) / L
    return float(((center - p[0]) @ n).mean())


def fillet_curve(p0, t0, p2, t2, step: float = 0.25) -> np.ndarray:
    """Circular fillet tangent to both lane lines, with a straight lead on the longer side."""
    p0, t0, p2, t2 = (np.asarray(v, dtype=float) for v in (p0, t0, p2, t2))
    t0 = t0 / np.linalg.norm(t0)
    t2 = t2 / np.linalg.norm(t2)
    det = t0[0] * t2[1] - t0[1] * t2[0]
    if abs(det) < 1e-6:
        return _line(p0, p2, step)
    w = p2 - p0
    a = (w[0] * t2[1] - w[1] * t2[0]) / det
    b = (t0[0] * w[1] - t0[1] * w[0]) / det  # p2 = p0 + a t0 + b t2
    if a <= 0 or b <= 0:
        return _line(p0, p2, step)
    C = p0 + a * t0
    T = min(a, b)
    A0, A2 = C - T * t0, C + T * t2
    turn = math.atan2(det, float(t0 @ t2))
    r = T / math.tan(abs(turn) / 2)
    n0 = np.array([-t0[1], t0[0]]) * math.copysign(1.0, turn)
    center = A0 + r * n0
    a0 = math.atan2(*(A0 - center)[::-1])
    m = max(int(math.ceil(abs(turn) * r / step)), 2)
    ang = a0 + np.linspace(0.0, turn, m + 1)
    arc = center + r * np.column_stack([np.cos(ang), np.sin(ang)])
    parts = [_line(p0, A0, step)[:-1]] if a - T > 1e-9 else []
    parts.append(arc)
    if b - T > 1e-9:
        parts.append(_line(A2, p2, step)[1:])
    return np.vstack(parts)


# ---------------------------------------------------------------- bundle


@dataclass
class GroundTruthBundle:
    spec: ScenarioSpec
    network: RawRoadNetwork
    skeleton: SkeletonMap
    labels: np.ndarray
    ix0: int
    iy0: int
    truth: GroundTruth
    poses: list[Pose]
    camera: CameraModel
    ego_lanes: dict[str, np.ndarray] = field(default_factory=dict)
    frames: list[SemanticFrame] | None = None
    clouds: list[np.ndarray] | None = None

    @property
    def cell_size(self) -> float:
        return self.spec.cell_size

    def bev_map(self) -> BEVMap:
        return BEVMap.from_labels(self.labels, self.ix0, self.iy0, self.cell_size)

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "skeleton.json", out / "bev.png", out / "poses.csv", out / "camera.txt", out / "truth.json"]
        paths[0].write_text(self.network.to_json() + "\n", encoding="utf-8")
        write_bev_png(paths[1], self.labels, self.ix0, self.iy0, self.cell_size)
        write_poses(paths[2], self.poses)
        write_camera(paths[3], self.camera, FRAME_W, FRAME_H)
        paths[4].write_text(self.truth.dumps() + "\n", encoding="utf-8")
        if self.frames is not None:
            (out / "frames").mkdir(exist_ok=True)
            (out / "clouds").mkdir(exist_ok=True)
            for i, (fr, cl) in enumerate(zip(self.frames, self.clouds)):
                fp = out / "frames" / f"{i:04d}.png"
                cp = out / "clouds" / f"cloud_{i:04d}.bin"
                write_frame(fp, fr)
                write_cloud(cp, cl)
                paths += [fp, cp]
        return paths


def _poses_along(center: np.ndarray, spacing: float, t0: float, spec: ScenarioSpec) -> list[Pose]:
    cum = cumulative_length(center)
    st = np.arange(0.0, cum[-1] + 1e-9, spacing)
    x = np.interp(st, cum, center[:, 0])
    y = np.interp(st, cum, center[:, 1])
    seg = np.clip(np.searchsorted(cum, st, side="right") - 1, 0, len(center) - 2)
    tang = center[seg + 1] - center[seg]
    yaw = np.arctan2(tang[:, 1], tang[:, 0])
    xy = np.column_stack([x, y])
    z = terrain_height(xy, spec)
    g = terrain_gradient(xy, spec)
    fwd = g[:, 0] * np.cos(yaw) + g[:, 1] * np.sin(yaw)
    lat = -g[:, 0] * np.sin(yaw) + g[:, 1] * np.cos(yaw)
    pitch = -np.arctan(fwd)
    roll = np.arctan(lat * np.cos(pitch))
    speed = 10.0
    return [
        Pose(round(t0 + float(si) / speed, 6), float(xi), float(yi), float(zi), float(a), float(p), float(r))
        for si, xi, yi, zi, a, p, r in zip(st, x, y, z, yaw, pitch, roll)
    ]


def render_frame(pose: Pose, cam: CameraModel, labels, ix0, iy0, spec: ScenarioSpec,
                 width: int = FRAME_W, height: int = FRAME_H, max_range: float = 60.0) -> SemanticFrame:
    """Semantic camera image by ray casting onto the true ground surface."""
    cs = spec.cell_size
    v0 = max(int(math.floor(cam.cy)) - 30, 0)
    U, V = np.meshgrid(np.arange(width) + 0.5, np.arange(v0, height) + 0.5)
    dc = np.column_stack([(U.ravel() - cam.cx) / cam.fx, (V.ravel() - cam.cy) / cam.fy, np.ones(U.size)])
    Rp = pose.rotation()
    dirs = dc @ (Rp @ cam.rotation).T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origin = pose.position + Rp @ cam.translation

    def g(t, idx):
        p = origin[:2] + t[:, None] * dirs[idx, :2]
        return origin[2] + t * dirs[idx, 2] - terrain_height(p, spec)

    n = len(dirs)
    hit = np.zeros(n, dtype=bool)
    lo = np.zeros(n)
    hi = np.zeros(n)
    all_idx = np.arange(n)
    cand = all_idx[dirs[:, 2] < 0.02]
    step = 1.0
    prev_t = np.zeros(len(cand))
    for t in np.arange(step, max_range + step, step):
        if len(cand) == 0:
            break
        tt = np.full(len(cand), t)
        below = g(tt, cand) <= 0
        if below.any():
            lo[cand[below]] = prev_t[below]
            hi[cand[below]] = t
            hit[cand[below]] = True
            cand = cand[~below]
            prev_t = prev_t[~below]
        prev_t = np.full(len(cand), t)
    idx = np.flatnonzero(hit)
    a, b = lo[idx], hi[idx]
    for _ in range(30):
        mid = 0.5 * (a + b)
        above = g(mid, idx) > 0
        a = np.where(above, mid, a)
        b = np.where(above, b, mid)
    t = 0.5 * (a + b)
    pts = origin[:2] + t[:, None] * dirs[idx, :2]
    jx = np.floor(pts[:, 0] / cs).astype(np.int64) - ix0
    jy = np.floor(pts[:, 1] / cs).astype(np.int64) - iy0
    ny, nx = labels.shape
    ok = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)
    codes = np.zeros(n, dtype=np.uint8)
    codes[idx[ok]] = labels[jy[ok], jx[ok]]
    img = np.zeros((height, width), dtype=np.uint8)
    img[v0:] = codes.reshape(height - v0, width)
    return SemanticFrame(pose.timestamp, img)


def ground_cloud(pose: Pose, spec: ScenarioSpec, spacing: float = 2.0) -> np.ndarray:
    """Ground returns on a regular vehicle-frame grid, expressed in the vehicle frame."""
    gx, gy = np.meshgrid(np.arange(-4.0, 46.0 + 1e-9, spacing), np.arange(-18.0, 18.0 + 1e-9, spacing))
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    mx = pose.x + c * gx.ravel() - s * gy.ravel()
    my = pose.y + s * gx.ravel() + c * gy.ravel()
    mz = terrain_height(np.column_stack([mx, my]), spec)
    P = np.column_stack([mx, my, mz]) - pose.position
    return P @ pose.rotation()


def generate(spec: ScenarioSpec) -> GroundTruthBundle:
    """Build a complete scenario; output depends only on the scenario settings, seed included."""
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    net, cors = _layout(spec)
    smap = build_skeleton(net)
    labels, ix0, iy0 = rasterize(cors, spec, rng)
    if spec.flip_rate > 0:
        labels = corrupt(BEVMap.from_labels(labels, ix0, iy0, spec.cell_size), spec.flip_rate,
                         spec.rng_seed + 1).labels

    rois = smap.rois()
    roads: dict[str, list[tuple[float, TruthLane]]] = {}
    ego: dict[str, np.ndarray] = {}
    full: dict[str, list[tuple[float, np.ndarray]]] = {}
    for cor in cors:
        eids = _edge_ids(cor, spec.two_way)
        for r in cor.ribbons:
            eid = eids[r.direction]
            edge = smap.edges[eid]
            center, left, right = _ribbon_polylines(cor, r)
            key = _order_key(center, edge.polyline)
            full.setdefault(eid, []).append((key, center))
            clipped = _clip_outside((center, left, right), [rois[edge.source], rois[edge.target]])
            if clipped is None:
                continue
            roads.setdefault(eid, []).append((key, TruthLane(*clipped)))
    truth_roads = {}
    for eid in smap.edges:
        lanes = sorted(roads.get(eid, []), key=lambda kv: -kv[0])
        truth_roads[eid] = [ln for _, ln in lanes]
        if eid in full:
            ego[eid] = min(full[eid], key=lambda kv: kv[0])[1]  # right-most lane

    conns = []
    for inter in smap.real_intersections():
        for ein in sorted(inter.incoming):
            twin = smap.edges[ein].twin
            for eout in sorted(inter.outgoing):
                if eout == twin:
                    continue
                lin, lout = truth_roads[ein], truth_roads[eout]
                for k in range(min(len(lin), len(lout))):
                    c_in, c_out = lin[k].center, lout[k].center
                    curve = fillet_curve(c_in[-1], c_in[-1] - c_in[-2], c_out[0], c_out[1] - c_out[0])
                    conns.append(TruthConnection(ein, k, eout, k, inter.id, curve))

    meta = {
        "spec": spec.to_dict(),
        "intersections": [i.id for i in smap.real_intersections()],
        "cell_size": spec.cell_size,
    }
    truth = GroundTruth(truth_roads, conns, meta)

    cam = CameraModel.forward_facing(fx=300.0, fy=300.0, cx=FRAME_W / 2, cy=FRAME_H / 2, height=1.5)
    poses: list[Pose] = []
    t0 = 0.0
    for eid in smap.edges:
        if eid in ego:
            poses += _poses_along(ego[eid], spec.pose_spacing, t0, spec)
            t0 = poses[-1].timestamp + 10.0

    frames = clouds = None
    if spec.frames or spec.topography == "sine":
        frames = [render_frame(p, cam, labels, ix0, iy0, spec) for p in poses]
        clouds = [ground_cloud(p, spec) for p in poses]
    return GroundTruthBundle(spec, net, smap, labels, ix0, iy0, truth, poses, cam, ego, frames, clouds)


def load_spec(path) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return ScenarioSpec.from_dict(data)

"""From explored particle histories to lane center lines and boundaries.

Terminal particles are clustered with DBSCAN, one lane per cluster. All
ancestor positions of a cluster's members are pooled and fit with a
breakpoint-optimized piecewise-linear function in a road-aligned frame,
which is then smoothed by a natural cubic spline through its knots. Lane
widths are probed sideways from every way point, separately on each side.
When the intersection regions at both ends are known, each center line is
cut back to, or extended up to, their boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .bev_projection import BEVMap
from .dbscan import dbscan
from .geometry import points_in_polygon
from .lane_explorer import ParticleHistory
from .piecewise import PiecewiseFit, select_breaks
from .semantics import IS_DRIVABLE_AREA, SemanticClass
from .spline import NaturalSpline

PROBE_STOP = np.zeros(256, dtype=bool)
PROBE_STOP[[SemanticClass.LM_SOLID, SemanticClass.LM_DASHED, SemanticClass.CURB]] = True


@dataclass
class RegressionConfig:
    eps: float = 1.0
    min_pts: int = 5
    lam: float | None = None
    max_breaks: int = 6
    spacing: float = 1.0
    probe_max: float = 8.0
    probe_run: int = 3
    grid: int = 64
    min_segment: float = 5.0
    roi_extend: float = 10.0
    knot_spacing: float | None = 10.0


@dataclass(frozen=True)
class RoadFrame:
    """Road-aligned frame: ``s`` along ``heading`` from ``origin``, ``d`` to the left."""

    origin: tuple[float, float]
    heading: float

    @classmethod
    def from_polyline(cls, poly) -> "RoadFrame":
        p = np.asarray(poly, dtype=float)
        dx, dy = p[-1] - p[0]
        return cls((float(p[0, 0]), float(p[0, 1])), math.atan2(dy, dx))

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([c, s]), np.array([-s, c])

    def to_local(self, xy) -> tuple[np.ndarray, np.ndarray]:
        q = np.atleast_2d(np.asarray(xy, dtype=float)) - self.origin
        e, n = self.axes
        return q @ e, q @ n

    def to_map(self, s, d) -> np.ndarray:
        e, n = self.axes
        s = np.asarray(s, dtype=float)[..., None]
        d = np.asarray(d, dtype=float)[..., None]
        return np.asarray(self.origin) + s * e + d * n


@dataclass
class LaneCluster:
    cluster_id: int
    members: list[tuple[int, int]]  # (step, index) of terminal particles
    points: np.ndarray  # pooled ancestor positions
    terminals: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # member positions


@dataclass
class CenterLine:
    """Lane reference trajectory: spline ``d(s)`` in a road frame, plus sampled way points."""

    frame: RoadFrame
    knots: np.ndarray
    values: np.ndarray
    s: np.ndarray  # way point stations
    waypoints: np.ndarray  # (m, 2) map frame
    breaks: np.ndarray | None = None  # piecewise breakpoints; all interior knots when None

    @property
    def breakpoints(self) -> np.ndarray:
        return self.knots[1:-1] if self.breaks is None else self.breaks

    @cached_property
    def spline(self) -> NaturalSpline:
        return NaturalSpline(self.knots, self.values)

    def point_at(self, s) -> np.ndarray:
        return self.frame.to_map(s, self.spline(s))

    def tangent_at(self, s) -> np.ndarray:
        """Unit map-frame tangent(s) in the direction of increasing ``s``."""
        s = np.asarray(s, dtype=float)
        slope = np.asarray(self.spline(s, deriv=1), dtype=float)
        e, n = self.frame.axes
        t = e * np.ones_like(slope)[..., None] + slope[..., None] * n
        return t / np.linalg.norm(t, axis=-1, keepdims=True)

    def tangents(self) -> np.ndarray:
        return np.atleast_2d(self.tangent_at(self.s))

    def to_dict(self) -> dict:
        return {
            "origin": list(self.frame.origin),
            "heading": self.frame.heading,
            "knots": self.knots.tolist(),
            "values": self.values.tolist(),
            "s": self.s.tolist(),
            "waypoints": self.waypoints.tolist(),
            "breakpoints": self.breakpoints.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CenterLine":
        return cls(
            RoadFrame(tuple(d["origin"]), float(d["heading"])),
            np.asarray(d["knots"], dtype=float),
            np.asarray(d["values"], dtype=float),
            np.asarray(d["s"], dtype=float),
            np.asarray(d["waypoints"], dtype=float).reshape(-1, 2),
            np.asarray(d["breakpoints"], dtype=float) if "breakpoints" in d else None,
        )


def subdivide_knots(knots, max_gap: float) -> np.ndarray:
    """Knots with extra evenly spaced ones so no interval is longer than ``max_gap``."""
    knots = np.asarray(knots, dtype=float)
    out = [knots[:1]]
    for a, b in zip(knots[:-1], knots[1:]):
        n = max(int(math.ceil((b - a) / max_gap - 1e-9)), 1)
        out.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(out)


def smooth_natural_spline(fit: PiecewiseFit, frame: RoadFrame, spacing: float = 1.0,
                          knot_spacing: float | None = None) -> CenterLine:
    """Natural spline through the piecewise fit, sampled every ``spacing`` meters of ``s``.

    The spline passes through the fit at its breakpoints and ends. With
    ``knot_spacing``, long segments get extra knots on the fitted line,
    which keeps the spline from overshooting after a sharp bend.
    """
    knots = np.asarray(fit.knots, dtype=float)
    if knot_spacing is not None:
        knots = subdivide_knots(knots, knot_spacing)
    values = np.interp(knots, fit.knots, fit.values)
    spline = NaturalSpline(knots, values)
    s = np.arange(knots[0], knots[-1], spacing)
    if len(s) == 0 or knots[-1] - s[-1] > 1e-9:
        s = np.append(s, knots[-1])
    line = CenterLine(frame, knots, values, s, frame.to_map(s, spline(s)),
                      np.asarray(fit.breakpoints, dtype=float).copy())
    line.__dict__["spline"] = spline
    return line


@dataclass
class LaneBoundarySamples:
    left: np.ndarray
    right: np.ndarray
    left_flag: np.ndarray  # True where no boundary was found within the probe range
    right_flag: np.ndarray
    left_class: np.ndarray  # raster class that stopped the probe, -1 if none
    right_class: np.ndarray
    B_left: np.ndarray
    B_right: np.ndarray

    def polygon(self) -> np.ndarray:
        """Lane area: left boundary followed by the reversed right boundary."""
        return np.vstack([self.B_left, self.B_right[::-1]])

    def to_dict(self) -> dict:
        return {
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "left_flag": self.left_flag.astype(bool).tolist(),
            "right_flag": self.right_flag.astype(bool).tolist(),
            "left_class": self.left_class.astype(int).tolist(),
            "right_class": self.right_class.astype(int).tolist(),
            "B_left": self.B_left.tolist(),
            "B_right": self.B_right.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LaneBoundarySamples":
        return cls(
            np.asarray(d["left"], dtype=float),
            np.asarray(d["right"], dtype=float),
            np.asarray(d["left_flag"], dtype=bool),
            np.asarray(d["right_flag"], dtype=bool),
            np.asarray(d["left_class"], dtype=int),
            np.asarray(d["right_class"], dtype=int),
            np.asarray(d["B_left"], dtype=float).reshape(-1, 2),
            np.asarray(d["B_right"], dtype=float).reshape(-1, 2),
        )


def _run_start(mask: np.ndarray, run: int) -> np.ndarray:
    """True where a run of at least ``run`` consecutive True values begins."""
    if run <= 1:
        return mask
    k = mask.shape[1]
    out = np.zeros_like(mask)
    if k < run:
        return out
    acc = mask[:, : k - run + 1].copy()
    for r in range(1, run):
        acc &= mask[:, r : k - run + 1 + r]
    out[:, : k - run + 1] = acc
    return out


def probe_offsets(bev: BEVMap, points, directions, own=None, max_offset: float = 8.0, run: int = 3):
    """March from each point along its direction in one-cell steps.

    Stops at a lane marking or curb cell, or at the start of a run of ``run``
    cells that are either of a drivable class other than ``own`` or unknown.
    Returns (offset, found, stop class).
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    m = len(P)
    cs = bev.cell_size
    K = int(round(max_offset / cs))
    if own is None:
        own = bev.lookup(P)[0]
    own = np.asarray(own).astype(np.int64)
    steps = np.arange(1, K + 1) * cs
    Q = P[:, None, :] + D[:, None, :] * steps[None, :, None]
    lab = bev.lookup(Q.reshape(-1, 2))[0].reshape(m, K).astype(np.int64)
    own_da = IS_DRIVABLE_AREA[own][:, None]
    other = IS_DRIVABLE_AREA[lab] & (lab != own[:, None]) & own_da
    stop = PROBE_STOP[lab] | _run_start(other, run) | _run_start(lab == SemanticClass.UNKNOWN, run)
    found = stop.any(axis=1)
    first = np.argmax(stop, axis=1)
    offset = np.where(found, (first + 0.5) * cs, max_offset)
    offset = np.minimum(offset, max_offset)
    cls = np.where(found, lab[np.arange(m), first], -1)
    return offset, found, cls


def probe_width(center: CenterLine, bev: BEVMap, max_offset: float = 8.0, run: int = 3) -> LaneBoundarySamples:
    """Left and right lateral extent of the lane at every way point."""
    W = center.waypoints
    if len(W) < 2:
        raise ValueError("center line needs at least 2 way points")
    T = center.tangents()
    N = np.column_stack([-T[:, 1], T[:, 0]])
    own = bev.lookup(W)[0]
    left, lf, lc = probe_offsets(bev, W, N, own, max_offset, run)
    right, rf, rc = probe_offsets(bev, W, -N, own, max_offset, run)
    return LaneBoundarySamples(
        left, right, ~lf, ~rf, lc, rc,
        W + left[:, None] * N,
        W - right[:, None] * N,
    )


@dataclass
class Lane:
    center: CenterLine
    bounds: LaneBoundarySamples
    n_terminal: int = 0
    n_points: int = 0

    @property
    def order_key(self) -> float:
        """Mean signed lateral offset of the way points (left is positive)."""
        _, d = self.center.frame.to_local(self.center.waypoints)
        return float(d.mean())

    def to_dict(self) -> dict:
        return {
            "center": self.center.to_dict(),
            "bounds": self.bounds.to_dict(),
            "n_terminal": self.n_terminal,
            "n_points": self.n_points,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Lane":
        return cls(
            CenterLine.from_dict(d["center"]),
            LaneBoundarySamples.from_dict(d["bounds"]),
            int(d.get("n_terminal", 0)),
            int(d.get("n_points", 0)),
        )


@dataclass
class AtomicRoad:
    edge_id: str
    lanes: list[Lane] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.lanes)

    def to_dict(self) -> dict:
        return {"edge_id": self.edge_id, "lanes": [ln.to_dict() for ln in self.lanes]}

    @classmethod
    def from_dict(cls, d: dict) -> "AtomicRoad":
        return cls(d["edge_id"], [Lane.from_dict(x) for x in d.get("lanes", [])])


def cluster_terminals(history: ParticleHistory, eps: float = 1.0, min_pts: int = 5) -> list[LaneCluster]:
    refs = history.terminal_refs()
    if not refs:
        return []
    pts = history.terminal_points()
    labels = dbscan(pts, eps, min_pts)
    clusters = []
    for k in range(int(labels.max()) + 1):
        members = [refs[i] for i in np.flatnonzero(labels == k)]
        clusters.append(LaneCluster(k, members, history.pooled_points(members), pts[labels == k]))
    return clusters


def _boundary_station(center: CenterLine, s_from: float, outward: int, poly, extend: float,
                      span: float) -> float:
    """Station where the center line meets the boundary of ``poly``.

    ``outward`` (+1 or -1) points from the line towards the region. An end
    already inside is walked back inwards (at most ``span``) to the first
    station outside; an end outside is pushed outwards (at most ``extend``)
    to the last station before entering.
    """
    step = 0.05
    if points_in_polygon(center.point_at(np.array([s_from])), poly)[0]:
        ss = s_from - outward * step * np.arange(int(math.ceil(span / step)) + 1)
        out = np.flatnonzero(~points_in_polygon(center.point_at(ss), poly))
        return float(ss[out[0]]) if len(out) else s_from
    ss = s_from + outward * step * np.arange(int(math.ceil(extend / step)) + 1)
    hit = np.flatnonzero(points_in_polygon(center.point_at(ss), poly))
    return float(ss[hit[0] - 1]) if len(hit) else s_from


def clip_to_rois(center: CenterLine, source_roi, target_roi, spacing: float = 1.0,
                 extend: float = 10.0) -> CenterLine:
    """Trim or extend the center line so it runs from one region boundary to the other."""
    s0, s1 = float(center.s[0]), float(center.s[-1])
    span = s1 - s0
    a = s0 if source_roi is None else _boundary_station(center, s0, -1, source_roi, extend, span)
    b = s1 if target_roi is None else _boundary_station(center, s1, +1, target_roi, extend, span)
    if not b - a > spacing:
        return center
    s = np.arange(a, b, spacing)
    if b - s[-1] > 1e-9:
        s = np.append(s, b)
    line = CenterLine(center.frame, center.knots, center.values, s, center.point_at(s), center.breaks)
    line.__dict__["spline"] = center.spline
    return line


def fit_lane(points, frame: RoadFrame, bev: BEVMap, cfg: RegressionConfig, rois=None,
             s_cut: float | None = None) -> Lane | None:
    """Regress one lane. Points beyond station ``s_cut`` are ignored when enough remain."""
    s, d = frame.to_local(points)
    if s_cut is not None:
        keep = s <= s_cut
        if keep.sum() >= 10 and np.ptp(s[keep]) > 2 * cfg.min_segment:
            s, d = s[keep], d[keep]
    if len(s) < 2 or not np.ptp(s) > 0:
        return None
    fit = select_breaks(s, d, cfg.max_breaks, cfg.lam, cfg.grid, cfg.min_segment)
    center = smooth_natural_spline(fit, frame, cfg.spacing, cfg.knot_spacing)
    if rois is not None:
        center = clip_to_rois(center, rois[0], rois[1], cfg.spacing, cfg.roi_extend)
    bounds = probe_width(center, bev, cfg.probe_max, cfg.probe_run)
    return Lane(center, bounds, n_points=len(s))


def build_atomic_road(history: ParticleHistory, bev: BEVMap, edge, cfg: RegressionConfig | None = None,
                      edge_id: str | None = None, rois=None) -> AtomicRoad:
    """Cluster, regress and probe every lane explored along one atomic road.

    ``edge`` is a skeleton edge (anything with ``polyline``) or a bare
    polyline; its start-to-end bearing fixes the regression frame.
    ``rois`` is an optional (source, target) pair of region polygons that
    the center lines are clipped to; either may be None.
    """
    cfg = cfg or RegressionConfig()
    poly = getattr(edge, "polyline", edge)
    if edge_id is None:
        edge_id = getattr(edge, "id", "")
    road = AtomicRoad(edge_id)
    if history is None or history.n_steps == 0:
        return road
    frame = RoadFrame.from_polyline(poly)
    for cl in cluster_terminals(history, cfg.eps, cfg.min_pts):
        # past the first arrival, only late (outer) particles remain, which biases the fit
        s_cut = float(frame.to_local(cl.terminals)[0].min()) if rois is not None and len(cl.terminals) else None
        lane = fit_lane(cl.points, frame, bev, cfg, rois, s_cut)
        if lane is not None:
            lane.n_terminal = len(cl.members)
            road.lanes.append(lane)
    road.lanes.sort(key=lambda ln: -ln.order_key)
    return road

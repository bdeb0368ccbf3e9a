"""Lane-level topology and reference curves inside intersections.

Every incoming road is paired with every outgoing road except its own
reverse twin, and lanes are matched by left-to-right index up to the
smaller lane count. Each connection gets a quadratic Bezier curve whose
control point is where the entry and exit lane headings meet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lane_regressor import AtomicRoad

DEFAULT_SAMPLES = 20
DEFAULT_MAX_HEADING_CHANGE = math.radians(150.0)


class BezierDomainError(ValueError):
    pass


def _sorted_roads(roads) -> list[AtomicRoad]:
    if isinstance(roads, dict):
        roads = roads.values()
    return sorted(roads, key=lambda r: r.edge_id)


def infer_connections(incoming, outgoing, skeleton=None) -> list[tuple[str, int, str, int]]:
    """``(in_edge, k, out_edge, k)`` tuples, lane indices 0-based from the left.

    Ordered lexicographically by (in_edge, out_edge, k). When a skeleton is
    given, the reverse twin of an incoming road is skipped (no U-turns).
    """
    out = []
    for rin in _sorted_roads(incoming):
        twin = None
        if skeleton is not None and rin.edge_id in skeleton.edges:
            twin = skeleton.edges[rin.edge_id].twin
        for rout in _sorted_roads(outgoing):
            if rout.edge_id == twin:
                continue
            for k in range(min(rin.K, rout.K)):
                out.append((rin.edge_id, k, rout.edge_id, k))
    return out


def _cross(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def control_point(p0, t0, p2, t2, tol: float = 1e-6) -> tuple[np.ndarray, bool]:
    """Meeting point of the entry ray ``p0 + a*t0`` and the exit line through ``p2``.

    Returns (P, fallback); ``fallback`` is True when the lines are parallel,
    meet behind the entry or beyond the exit, and the midpoint of ``p0, p2``
    is used instead.
    """
    p0 = np.asarray(p0, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    t0 = np.asarray(t0, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    det = _cross(t0, t2)
    mid = 0.5 * (p0 + p2)
    if abs(det) < tol:
        return mid, True
    # p0 + a t0 = p2 - b t2
    a = _cross(p2 - p0, t2) / det
    b = _cross(t0, p2 - p0) / det
    if a < 0 or b < 0:
        return mid, True
    return p0 + a * t0, False


def bezier_eval(P0, P, P2, alpha):
    """Quadratic Bezier ``(1-a)^2 P0 + 2a(1-a) P + a^2 P2`` for ``a`` in [0, 1]."""
    a = np.asarray(alpha, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
        raise BezierDomainError("alpha must lie in [0, 1]")
    P0 = np.asarray(P0, dtype=float)
    P = np.asarray(P, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    a_ = a[..., None]
    out = (1.0 - a_) ** 2 * P0 + 2.0 * a_ * (1.0 - a_) * P + a_**2 * P2
    # pin the endpoints exactly
    out = np.where(a_ == 0.0, P0, out)
    out = np.where(a_ == 1.0, P2, out)
    return out


def bezier_derivative(P0, P, P2, alpha):
    a = np.asarray(alpha, dtype=float)[..., None]
    P0, P, P2 = (np.asarray(v, dtype=float) for v in (P0, P, P2))
    return 2.0 * (1.0 - a) * (P - P0) + 2.0 * a * (P2 - P)


@dataclass
class LaneConnection:
    in_edge: str
    in_lane: int
    out_edge: str
    out_lane: int
    P0: np.ndarray
    P: np.ndarray
    P2: np.ndarray
    fallback: bool = False
    curve: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @property
    def key(self) -> tuple[str, int, str, int]:
        return (self.in_edge, self.in_lane, self.out_edge, self.out_lane)

    def to_dict(self) -> dict:
        return {
            "in_edge": self.in_edge,
            "in_lane": self.in_lane,
            "out_edge": self.out_edge,
            "out_lane": self.out_lane,
            "P0": self.P0.tolist(),
            "P": self.P.tolist(),
            "P2": self.P2.tolist(),
            "fallback": bool(self.fallback),
            "curve": self.curve.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LaneConnection":
        return cls(
            d["in_edge"], int(d["in_lane"]), d["out_edge"], int(d["out_lane"]),
            np.asarray(d["P0"], dtype=float), np.asarray(d["P"], dtype=float),
            np.asarray(d["P2"], dtype=float), bool(d.get("fallback", False)),
            np.asarray(d.get("curve", []), dtype=float).reshape(-1, 2),
        )


@dataclass
class Intersection:
    intersection_id: str
    connections: list[LaneConnection] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.intersection_id, "connections": [c.to_dict() for c in self.connections]}

    @classmethod
    def from_dict(cls, d: dict) -> "Intersection":
        return cls(d["id"], [LaneConnection.from_dict(c) for c in d.get("connections", [])])


def _heading_change(t0, t2) -> float:
    return abs(math.atan2(_cross(t0, t2), float(np.dot(t0, t2))))


def build_intersection(
    intersection_id: str,
    incoming,
    outgoing,
    skeleton=None,
    n_samples: int = DEFAULT_SAMPLES,
    max_heading_change: float | None = None,
) -> Intersection:
    """Connections with Bezier curves for one intersection.

    ``max_heading_change`` (radians) optionally drops connections that turn
    more sharply than the given angle; it is off by default.
    """
    inc = {r.edge_id: r for r in _sorted_roads(incoming)}
    outg = {r.edge_id: r for r in _sorted_roads(outgoing)}
    alphas = np.linspace(0.0, 1.0, n_samples)
    conns = []
    for ein, k, eout, l in infer_connections(inc, outg, skeleton):
        cin = inc[ein].lanes[k].center
        cout = outg[eout].lanes[l].center
        p0 = cin.waypoints[-1]
        p2 = cout.waypoints[0]
        t0 = cin.tangent_at(cin.s[-1])
        t2 = cout.tangent_at(cout.s[0])
        if max_heading_change is not None and _heading_change(t0, t2) > max_heading_change:
            continue
        P, fb = control_point(p0, t0, p2, t2)
        conns.append(LaneConnection(ein, k, eout, l, p0.copy(), P, p2.copy(), fb,
                                    bezier_eval(p0, P, p2, alphas)))
    return Intersection(intersection_id, conns)

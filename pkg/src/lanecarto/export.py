"""Map document export: GeoJSON, a simple lanelet-style JSON, and SVG.

Coordinates stay in the local metric frame of the skeleton (meters, x east,
y north); no geographic reference system is attached.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

FORMATS = ("geojson", "lanelet-json", "svg")
LANELET_FORMAT = "lanecarto-lanelet"


class ExportFormatError(ValueError):
    pass


def lane_id(edge_id: str, k: int) -> str:
    return f"{edge_id}#{k}"


def _coords(a) -> list[list[float]]:
    return np.asarray(a, dtype=float).reshape(-1, 2).tolist()


def _ring(poly) -> list[list[float]]:
    P = _coords(poly)
    if P and P[0] != P[-1]:
        P.append(P[0])
    return P


def _iter_lanes(doc):
    for eid in sorted(doc.roads):
        for k, lane in enumerate(doc.roads[eid].lanes):
            yield eid, k, lane


def _iter_connections(doc):
    for iid in sorted(doc.intersections):
        for c in doc.intersections[iid].connections:
            yield iid, c


# ---------------------------------------------------------------- geojson


def to_geojson(doc) -> dict:
    feats = []
    for eid, k, lane in _iter_lanes(doc):
        props = {"road": eid, "lane": k, "id": lane_id(eid, k)}
        feats.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": _coords(lane.center.waypoints)},
            "properties": {**props, "role": "center_line"},
        })
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [_ring(lane.bounds.polygon())]},
            "properties": {**props, "role": "lane_area"},
        })
    for iid, c in _iter_connections(doc):
        feats.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": _coords(c.curve)},
            "properties": {
                "role": "connection",
                "intersection": iid,
                "from": lane_id(c.in_edge, c.in_lane),
                "to": lane_id(c.out_edge, c.out_lane),
                "fallback": bool(c.fallback),
            },
        })
    return {"type": "FeatureCollection", "features": feats}


# ---------------------------------------------------------------- lanelet json


@dataclass
class Lanelet:
    id: str
    road: str
    index: int
    left: np.ndarray
    right: np.ndarray
    centerline: np.ndarray
    successors: list[str] = field(default_factory=list)
    predecessors: list[str] = field(default_factory=list)


def to_lanelets(doc) -> dict:
    succ: dict[str, list[str]] = {}
    pred: dict[str, list[str]] = {}
    conns = []
    for iid, c in _iter_connections(doc):
        a, b = lane_id(c.in_edge, c.in_lane), lane_id(c.out_edge, c.out_lane)
        succ.setdefault(a, []).append(b)
        pred.setdefault(b, []).append(a)
        conns.append({"intersection": iid, "from": a, "to": b, "curve": _coords(c.curve)})
    lanelets = []
    for eid, k, lane in _iter_lanes(doc):
        lid = lane_id(eid, k)
        lanelets.append({
            "id": lid,
            "road": eid,
            "index": k,
            "left": _coords(lane.bounds.B_left),
            "right": _coords(lane.bounds.B_right),
            "centerline": _coords(lane.center.waypoints),
            "successors": sorted(succ.get(lid, [])),
            "predecessors": sorted(pred.get(lid, [])),
        })
    return {"format": LANELET_FORMAT, "version": 1, "lanelets": lanelets, "connections": conns}


def read_lanelets(data) -> dict[str, Lanelet]:
    """Parse lanelet JSON (text or already-decoded dict) back into lanelets keyed by id."""
    if isinstance(data, (str, bytes)):
        data = json.loads(data)
    if data.get("format") != LANELET_FORMAT:
        raise ExportFormatError(f"not a {LANELET_FORMAT} document")
    out = {}
    for d in data.get("lanelets", []):
        out[d["id"]] = Lanelet(
            d["id"], d["road"], int(d["index"]),
            np.asarray(d["left"], dtype=float).reshape(-1, 2),
            np.asarray(d["right"], dtype=float).reshape(-1, 2),
            np.asarray(d["centerline"], dtype=float).reshape(-1, 2),
            list(d.get("successors", [])), list(d.get("predecessors", [])),
        )
    return out


# ---------------------------------------------------------------- svg


SVG_STYLE = {
    "lane_area": 'fill="#9ecae1" fill-opacity="0.55" stroke="none"',
    "boundary": 'fill="none" stroke="#08306b" stroke-width="0.15" stroke-dasharray="0.4 0.4"',
    "center_line": 'fill="none" stroke="#d94801" stroke-width="0.15" stroke-dasharray="1 0.6"',
    "connection": 'fill="none" stroke="#238b45" stroke-width="0.15" stroke-dasharray="1 0.6"',
}


def _path(points, flip: float) -> str:
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    return " ".join(f"{x:.3f},{flip - y:.3f}" for x, y in P)


def to_svg(doc, margin: float = 5.0) -> str:
    pts = [np.asarray(e.polyline, dtype=float) for e in doc.skeleton.edges.values()]
    for _, _, lane in _iter_lanes(doc):
        pts.append(lane.bounds.polygon())
    for _, c in _iter_connections(doc):
        pts.append(c.curve)
    pts = [p.reshape(-1, 2) for p in pts if np.size(p)]
    if pts:
        allp = np.vstack(pts)
        lo, hi = allp.min(axis=0) - margin, allp.max(axis=0) + margin
    else:
        lo, hi = np.array([0.0, 0.0]), np.array([1.0, 1.0])
    w, h = hi - lo
    flip = float(lo[1] + hi[1])  # mirror y so north is up
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{lo[0]:.3f} {lo[1]:.3f} {w:.3f} {h:.3f}">',
        f'<rect x="{lo[0]:.3f}" y="{lo[1]:.3f}" width="{w:.3f}" height="{h:.3f}" fill="white"/>',
    ]
    for eid, k, lane in _iter_lanes(doc):
        tag = f'data-lane="{lane_id(eid, k)}"'
        out.append(f'<polygon class="lane_area" {tag} {SVG_STYLE["lane_area"]} '
                   f'points="{_path(lane.bounds.polygon(), flip)}"/>')
        for side in (lane.bounds.B_left, lane.bounds.B_right):
            out.append(f'<polyline class="boundary" {tag} {SVG_STYLE["boundary"]} points="{_path(side, flip)}"/>')
        out.append(f'<polyline class="center_line" {tag} {SVG_STYLE["center_line"]} '
                   f'points="{_path(lane.center.waypoints, flip)}"/>')
    for iid, c in _iter_connections(doc):
        out.append(f'<polyline class="connection" data-intersection="{iid}" {SVG_STYLE["connection"]} '
                   f'points="{_path(c.curve, flip)}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export(doc, fmt: str) -> str:
    if fmt == "geojson":
        return json.dumps(to_geojson(doc), sort_keys=True) + "\n"
    if fmt == "lanelet-json":
        return json.dumps(to_lanelets(doc), sort_keys=True) + "\n"
    if fmt == "svg":
        return to_svg(doc)
    raise ExportFormatError(f"unknown export format {fmt!r}; choose from {', '.join(FORMATS)}")

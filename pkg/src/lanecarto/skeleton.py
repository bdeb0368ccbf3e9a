"""Road skeleton: OSM ingestion, directed atomic-road graph, intersection ROIs.

The skeleton is a directed (possibly cyclic) graph. Every OSM way is split at
intersection nodes into atomic road stubs; two-way ways emit one stub per
direction with reversed, coincident polylines.
"""

from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .geometry import (
    cumulative_length,
    point_in_polygon,
    polyline_length,
    project_onto_polyline,
    signed_area,
    wrap_angle,
)

EARTH_RADIUS = 6371008.8

DRIVABLE_HIGHWAYS = frozenset(
    {
        "motorway", "trunk", "primary", "secondary", "tertiary",
        "motorway_link", "trunk_link", "primary_link", "secondary_link", "tertiary_link",
        "unclassified", "residential", "living_street", "service", "road",
    }
)

ROI_MIN_RADIUS = 5.0
ROI_MAX_VERTEX = 25.0


class OSMParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class NetworkValidationError(ValueError):
    def __init__(self, message: str, way_id: str | None = None):
        self.way_id = way_id
        super().__init__(message)


class SkeletonLookupError(LookupError):
    pass


@dataclass
class Way:
    id: str
    node_ids: list[str]
    oneway: bool = False
    highway: str = "residential"


@dataclass
class RawRoadNetwork:
    """Nodes in a local metric East-North frame plus ordered ways."""

    nodes: dict[str, tuple[float, float]] = field(default_factory=dict)
    ways: list[Way] = field(default_factory=list)

    def validate(self) -> None:
        for w in self.ways:
            if len(w.node_ids) < 2:
                raise NetworkValidationError(f"way {w.id} has fewer than 2 nodes", w.id)
            for nid in w.node_ids:
                if nid not in self.nodes:
                    raise NetworkValidationError(
                        f"way {w.id} references missing node {nid}", w.id
                    )

    def to_json(self) -> str:
        payload = {
            "nodes": [{"id": k, "x": v[0], "y": v[1]} for k, v in self.nodes.items()],
            "ways": [
                {"id": w.id, "nodes": list(w.node_ids), "oneway": w.oneway, "highway": w.highway}
                for w in self.ways
            ],
        }
        return json.dumps(payload, indent=1, sort_keys=True)


def _truthy_oneway(value: str | None) -> tuple[bool, bool]:
    """Return (oneway, reversed) for an OSM oneway tag value."""
    if value is None:
        return False, False
    v = value.strip().lower()
    if v in ("yes", "true", "1"):
        return True, False
    if v in ("-1", "reverse"):
        return True, True
    return False, False


def equirectangular(lat, lon, lat0: float, lon0: float):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    x = EARTH_RADIUS * np.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS * np.radians(lat - lat0)
    return x, y


def inverse_equirectangular(x, y, lat0: float, lon0: float):
    lat = lat0 + np.degrees(np.asarray(y, dtype=float) / EARTH_RADIUS)
    lon = lon0 + np.degrees(
        np.asarray(x, dtype=float) / (EARTH_RADIUS * math.cos(math.radians(lat0)))
    )
    return lat, lon


def parse_osm(xml_text: str, highways: Iterable[str] = DRIVABLE_HIGHWAYS) -> RawRoadNetwork:
    """Parse an OSM XML document into a :class:`RawRoadNetwork`.

    Only ``node`` and ``way`` elements are read. Ways whose ``highway`` tag is
    not in ``highways`` are dropped, as are nodes no retained way uses.
    Coordinates are projected about the bounding-box centroid of the kept
    nodes.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line = exc.position[0] if getattr(exc, "position", None) else None
        raise OSMParseError(f"malformed OSM XML: {exc}", line) from None

    accepted = frozenset(highways)
    latlon: dict[str, tuple[float, float]] = {}
    for el in root.iter("node"):
        nid = el.get("id")
        if nid is None:
            continue
        if el.get("lat") is not None and el.get("lon") is not None:
            latlon[nid] = (float(el.get("lat")), float(el.get("lon")))

    ways: list[Way] = []
    for el in root.iter("way"):
        tags = {t.get("k"): t.get("v") for t in el.findall("tag")}
        hw = tags.get("highway")
        if hw not in accepted:
            continue
        refs = [nd.get("ref") for nd in el.findall("nd")]
        oneway, rev = _truthy_oneway(tags.get("oneway"))
        if rev:
            refs = refs[::-1]
        ways.append(Way(id=str(el.get("id")), node_ids=refs, oneway=oneway, highway=hw))

    for w in ways:
        if len(w.node_ids) < 2:
            raise NetworkValidationError(f"way {w.id} has fewer than 2 nodes", w.id)
        for nid in w.node_ids:
            if nid not in latlon:
                raise NetworkValidationError(f"way {w.id} references missing node {nid}", w.id)

    referenced = {nid for w in ways for nid in w.node_ids}
    used = [nid for nid in latlon if nid in referenced]
    net = RawRoadNetwork(ways=ways)
    if not used:
        return net
    lats = np.array([latlon[n][0] for n in used])
    lons = np.array([latlon[n][1] for n in used])
    lat0 = 0.5 * (lats.min() + lats.max())
    lon0 = 0.5 * (lons.min() + lons.max())
    xs, ys = equirectangular(lats, lons, lat0, lon0)
    net.nodes = {n: (float(x), float(y)) for n, x, y in zip(used, xs, ys)}
    return net


def serialize_osm(net: RawRoadNetwork, lat0: float = 37.77, lon0: float = -122.42) -> str:
    """Write a network back to minimal OSM XML (inverse of :func:`parse_osm`)."""
    root = ET.Element("osm", version="0.6", generator="lanecarto")
    ids = list(net.nodes)
    xs = np.array([net.nodes[k][0] for k in ids])
    ys = np.array([net.nodes[k][1] for k in ids])
    lats, lons = inverse_equirectangular(xs, ys, lat0, lon0)
    for k, la, lo in zip(ids, np.atleast_1d(lats), np.atleast_1d(lons)):
        ET.SubElement(root, "node", id=k, lat=repr(float(la)), lon=repr(float(lo)))
    for w in net.ways:
        el = ET.SubElement(root, "way", id=w.id)
        for nid in w.node_ids:
            ET.SubElement(el, "nd", ref=nid)
        ET.SubElement(el, "tag", k="highway", v=w.highway)
        if w.oneway:
            ET.SubElement(el, "tag", k="oneway", v="yes")
    return ET.tostring(root, encoding="unicode")


def parse_network_json(text: str) -> RawRoadNetwork:
    """Read the plain JSON network format.

    Schema::

        {"nodes": [{"id": str, "x": float, "y": float}            # local meters
                   | {"id": str, "lat": float, "lon": float}],   # or geodetic
         "ways":  [{"id": str, "nodes": [str, ...],
                    "oneway": bool, "highway": str}]}
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise OSMParseError(f"malformed network JSON: {exc.msg}", exc.lineno) from None
    raw_nodes = data.get("nodes", [])
    nodes: dict[str, tuple[float, float]] = {}
    geo = [n for n in raw_nodes if "lat" in n]
    if geo:
        lats = np.array([n["lat"] for n in geo])
        lons = np.array([n["lon"] for n in geo])
        lat0 = 0.5 * (lats.min() + lats.max())
        lon0 = 0.5 * (lons.min() + lons.max())
    for n in raw_nodes:
        if "x" in n:
            nodes[str(n["id"])] = (float(n["x"]), float(n["y"]))
        else:
            x, y = equirectangular(n["lat"], n["lon"], lat0, lon0)
            nodes[str(n["id"])] = (float(x), float(y))
    ways = [
        Way(
            id=str(w["id"]),
            node_ids=[str(v) for v in w["nodes"]],
            oneway=bool(w.get("oneway", False)),
            highway=str(w.get("highway", "residential")),
        )
        for w in data.get("ways", [])
    ]
    net = RawRoadNetwork(nodes=nodes, ways=ways)
    net.validate()
    return net


def load_network(path) -> RawRoadNetwork:
    from pathlib import Path

    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() in (".osm", ".xml"):
        return parse_osm(text)
    return parse_network_json(text)


@dataclass(frozen=True)
class IntersectionStub:
    id: str
    center: tuple[float, float]
    incoming: tuple[str, ...]
    outgoing: tuple[str, ...]
    pseudo: bool = False

    @property
    def incident(self) -> tuple[str, ...]:
        return self.incoming + self.outgoing


@dataclass(frozen=True)
class AtomicRoadStub:
    id: str
    polyline: tuple[tuple[float, float], ...]
    source: str
    target: str
    node_ids: tuple[str, ...]
    way_id: str
    twin: str | None = None

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.polyline, dtype=float)

    @property
    def length(self) -> float:
        return polyline_length(self.polyline)

    @property
    def bearing(self) -> float:
        """Start-to-end bearing (radians, CCW from +x)."""
        p = self.polyline
        return math.atan2(p[-1][1] - p[0][1], p[-1][0] - p[0][0])


@dataclass(frozen=True)
class IntersectionROI:
    intersection_id: str
    polygon: tuple[tuple[float, float], ...]

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.polygon, dtype=float)

    def contains(self, pt) -> bool:
        return point_in_polygon(pt, self.polygon)


@dataclass(frozen=True)
class LocationRef:
    kind: str  # "on-edge" | "in-intersection"
    element_id: str
    offset: float | None = None


class SkeletonMap:
    """Directed graph of intersections and atomic road stubs (immutable)."""

    def __init__(self, intersections: dict[str, IntersectionStub], edges: dict[str, AtomicRoadStub]):
        self.intersections = dict(intersections)
        self.edges = dict(edges)
        self._roi_cache: dict[tuple, dict[str, IntersectionROI]] = {}

    def __len__(self) -> int:
        return len(self.edges)

    def real_intersections(self) -> list[IntersectionStub]:
        return [i for i in self.intersections.values() if not i.pseudo]

    def rois(self, r_min: float = ROI_MIN_RADIUS, max_vertex: float = ROI_MAX_VERTEX) -> dict[str, IntersectionROI]:
        key = (r_min, max_vertex)
        if key not in self._roi_cache:
            self._roi_cache[key] = {
                iid: intersection_roi(self, iid, r_min=r_min, max_vertex=max_vertex)
                for iid in self.intersections
            }
        return self._roi_cache[key]

    def to_dict(self) -> dict:
        return {
            "intersections": [
                {
                    "id": i.id, "center": list(i.center), "incoming": list(i.incoming),
                    "outgoing": list(i.outgoing), "pseudo": i.pseudo,
                }
                for i in self.intersections.values()
            ],
            "edges": [
                {
                    "id": e.id, "polyline": [list(p) for p in e.polyline], "source": e.source,
                    "target": e.target, "node_ids": list(e.node_ids), "way_id": e.way_id,
                    "twin": e.twin,
                }
                for e in self.edges.values()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonMap":
        inter = {
            i["id"]: IntersectionStub(
                id=i["id"], center=tuple(i["center"]), incoming=tuple(i["incoming"]),
                outgoing=tuple(i["outgoing"]), pseudo=bool(i["pseudo"]),
            )
            for i in d["intersections"]
        }
        edges = {
            e["id"]: AtomicRoadStub(
                id=e["id"], polyline=tuple(tuple(p) for p in e["polyline"]), source=e["source"],
                target=e["target"], node_ids=tuple(e["node_ids"]), way_id=e["way_id"],
                twin=e.get("twin"),
            )
            for e in d["edges"]
        }
        return cls(inter, edges)


def build_skeleton(net: RawRoadNetwork) -> SkeletonMap:
    """Split ways at intersections and emit directed atomic road stubs."""
    net.validate()
    ways_at: dict[str, set[int]] = {}
    nbrs: dict[str, set[str]] = {}
    for wi, w in enumerate(net.ways):
        for k, nid in enumerate(w.node_ids):
            ways_at.setdefault(nid, set()).add(wi)
            if k > 0:
                prev = w.node_ids[k - 1]
                if prev != nid:
                    nbrs.setdefault(nid, set()).add(prev)
                    nbrs.setdefault(prev, set()).add(nid)

    real = {n for n in ways_at if len(ways_at[n]) >= 2 or len(nbrs.get(n, ())) >= 3}
    termini = {n for w in net.ways for n in (w.node_ids[0], w.node_ids[-1])}
    cut_nodes = real | termini

    edges: dict[str, AtomicRoadStub] = {}
    order: list[str] = []
    incoming: dict[str, list[str]] = {n: [] for n in cut_nodes}
    outgoing: dict[str, list[str]] = {n: [] for n in cut_nodes}

    def _new_id(src: str, dst: str) -> str:
        base = f"{src}>{dst}"
        eid, k = base, 2
        while eid in edges:
            eid = f"{base}#{k}"
            k += 1
        return eid

    for w in net.ways:
        ids = w.node_ids
        cuts = [k for k, n in enumerate(ids) if n in cut_nodes or k in (0, len(ids) - 1)]
        for a, b in zip(cuts[:-1], cuts[1:]):
            seg = ids[a:b + 1]
            if len(set(seg)) < 2:
                continue
            poly = tuple(net.nodes[n] for n in seg)
            fwd = _new_id(seg[0], seg[-1])
            edges[fwd] = AtomicRoadStub(fwd, poly, seg[0], seg[-1], tuple(seg), w.id)
            order.append(fwd)
            outgoing[seg[0]].append(fwd)
            incoming[seg[-1]].append(fwd)
            if not w.oneway:
                rev = _new_id(seg[-1], seg[0])
                edges[rev] = AtomicRoadStub(
                    rev, poly[::-1], seg[-1], seg[0], tuple(seg[::-1]), w.id, twin=fwd
                )
                edges[fwd] = AtomicRoadStub(fwd, poly, seg[0], seg[-1], tuple(seg), w.id, twin=rev)
                order.append(rev)
                outgoing[seg[-1]].append(rev)
                incoming[seg[0]].append(rev)

    inter: dict[str, IntersectionStub] = {}
    for n in sorted(cut_nodes, key=_natural_key):
        inter[n] = IntersectionStub(
            id=n,
            center=net.nodes[n],
            incoming=tuple(incoming[n]),
            outgoing=tuple(outgoing[n]),
            pseudo=n not in real,
        )
    return SkeletonMap(inter, {e: edges[e] for e in order})


def _natural_key(s: str):
    return (0, int(s), "") if s.lstrip("-").isdigit() else (1, 0, s)


def _arms(smap: SkeletonMap, iid: str) -> list[tuple[float, float, float]]:
    """Distinct neighboring polyline nodes around an intersection: (bearing, dist, node)."""
    inter = smap.intersections[iid]
    cx, cy = inter.center
    seen: dict[str, tuple[float, float, float]] = {}
    for eid in inter.incident:
        e = smap.edges[eid]
        if e.source == iid:
            nid, pt = e.node_ids[1], e.polyline[1]
        else:
            nid, pt = e.node_ids[-2], e.polyline[-2]
        if nid in seen:
            continue
        dx, dy = pt[0] - cx, pt[1] - cy
        seen[nid] = (math.atan2(dy, dx), math.hypot(dx, dy), nid)
    return sorted(seen.values(), key=lambda a: (a[0], a[2]))


def intersection_roi(
    smap: SkeletonMap, iid: str, r_min: float = ROI_MIN_RADIUS, max_vertex: float = ROI_MAX_VERTEX
) -> IntersectionROI:
    """ROI polygon from the road nodes adjacent to an intersection.

    Vertices are the neighboring polyline nodes (clamped to ``max_vertex``
    meters) sorted counter-clockwise by bearing. Nodes with at most two
    distinct arms get an axis-aligned square of side ``2 * r_min``.
    """
    if iid not in smap.intersections:
        raise SkeletonLookupError(f"unknown intersection {iid!r}")
    inter = smap.intersections[iid]
    if not inter.incident:
        raise SkeletonLookupError(f"intersection {iid!r} has no incident edges")
    cx, cy = inter.center
    arms = _arms(smap, iid)
    if len(arms) <= 2:
        r = r_min
        sq = ((cx - r, cy - r), (cx + r, cy - r), (cx + r, cy + r), (cx - r, cy + r))
        return IntersectionROI(iid, sq)

    verts: list[tuple[float, float]] = []
    bearings = [a[0] for a in arms]
    for k, (b, dist, _) in enumerate(arms):
        r = min(dist, max_vertex)
        verts.append((cx + r * math.cos(b), cy + r * math.sin(b)))
        # angular gaps of pi or more would put the center on (or outside) the hull
        nb = bearings[(k + 1) % len(arms)] + (2 * math.pi if k == len(arms) - 1 else 0.0)
        gap = nb - b
        if gap >= math.pi - 1e-9:
            mid = b + 0.5 * gap
            verts.append((cx + r_min * math.cos(mid), cy + r_min * math.sin(mid)))
    if signed_area(verts) < 0:
        verts = verts[::-1]
    return IntersectionROI(iid, tuple(verts))


def locate(smap: SkeletonMap, pose, r_min: float = ROI_MIN_RADIUS) -> LocationRef:
    """Match a pose (anything with ``x``, ``y``, ``yaw``) to an ROI or edge."""
    if not smap.edges and not smap.intersections:
        raise SkeletonLookupError("empty skeleton map")
    x, y = float(pose.x), float(pose.y)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("pose position must be finite")
    rois = smap.rois(r_min=r_min)
    hits = [iid for iid, roi in rois.items() if roi.contains((x, y))]
    if hits:
        if len(hits) > 1:
            hits.sort(key=lambda i: math.hypot(x - smap.intersections[i].center[0],
                                               y - smap.intersections[i].center[1]))
        return LocationRef("in-intersection", hits[0])
    if not smap.edges:
        raise SkeletonLookupError("no edges to locate against")

    best = None
    for eid, e in smap.edges.items():
        pts = e.points
        dist, arc, seg = project_onto_polyline([[x, y]], pts)
        d, s, k = float(dist[0]), float(arc[0]), int(seg[0])
        a, b = pts[k], pts[k + 1]
        heading = math.atan2(b[1] - a[1], b[0] - a[0])
        dh = abs(wrap_angle(float(pose.yaw) - heading))
        cand = (d, dh, eid, s)
        if best is None or d < best[0] - 1e-6 or (abs(d - best[0]) <= 1e-6 and dh < best[1]):
            best = cand
    d, dh, eid, s = best
    length = cumulative_length(smap.edges[eid].points)[-1]
    return LocationRef("on-edge", eid, min(max(s, 0.0), length))

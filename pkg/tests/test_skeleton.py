import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_net, net_json
from lanecarto.bev_projection import Pose
from lanecarto.geometry import point_in_polygon, signed_area
from lanecarto.skeleton import (
    EARTH_RADIUS,
    NetworkValidationError,
    OSMParseError,
    SkeletonLookupError,
    SkeletonMap,
    build_skeleton,
    intersection_roi,
    locate,
    parse_network_json,
    parse_osm,
    serialize_osm,
)

MINIMAL_OSM = """<?xml version="1.0"?>
<osm version="0.6">
  <node id="1" lat="37.0" lon="-122.0"/>
  <node id="2" lat="37.0" lon="-121.999"/>
  <way id="10"><nd ref="1"/><nd ref="2"/><tag k="highway" v="residential"/><tag k="oneway" v="yes"/></way>
</osm>"""


def haversine(lat1, lon1, lat2, lon2):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS * math.asin(math.sqrt(a))


def test_parse_minimal_document():
    net = parse_osm(MINIMAL_OSM)
    assert len(net.nodes) == 2
    assert len(net.ways) == 1
    assert net.ways[0].oneway


def test_parse_ignores_non_drivable_ways():
    doc = MINIMAL_OSM.replace("</osm>", '<way id="11"><nd ref="1"/><nd ref="2"/>'
                                         '<tag k="highway" v="footway"/></way></osm>')
    assert [w.id for w in parse_osm(doc).ways] == ["10"]


def test_missing_node_names_way():
    doc = MINIMAL_OSM.replace('<nd ref="2"/>', '<nd ref="99"/>')
    with pytest.raises(NetworkValidationError) as exc:
        parse_osm(doc)
    assert exc.value.way_id == "10"


def test_malformed_xml_reports_line():
    with pytest.raises(OSMParseError) as exc:
        parse_osm("<osm>\n<node id='1'\n</osm>")
    assert exc.value.line is not None


def test_equirectangular_against_haversine():
    # 4 nodes spanning 100 m east-west on the equator
    dlon = math.degrees(100.0 / EARTH_RADIUS)
    lons = [i * dlon / 3 for i in range(4)]
    nodes = "".join(f'<node id="{i}" lat="0.0" lon="{lo!r}"/>' for i, lo in enumerate(lons))
    way = '<way id="w">' + "".join(f'<nd ref="{i}"/>' for i in range(4)) + '<tag k="highway" v="primary"/></way>'
    net = parse_osm(f"<osm>{nodes}{way}</osm>")
    xs = [net.nodes[str(i)][0] for i in range(4)]
    for i in range(3):
        truth = haversine(0.0, lons[i], 0.0, lons[i + 1])
        assert abs((xs[i + 1] - xs[i]) - truth) / truth < 1e-3
        assert abs(net.nodes[str(i)][1]) < 1e-9


def test_json_network_format():
    net = parse_network_json(net_json({"a": (0, 0), "b": (5, 0)}, [("w", ["a", "b"], True)]))
    assert net.nodes["b"] == (5.0, 0.0)
    with pytest.raises(NetworkValidationError):
        parse_network_json(net_json({"a": (0, 0)}, [("w", ["a", "zz"])]))


def test_crossing_two_way_roads(cross_map):
    real = cross_map.real_intersections()
    assert [i.id for i in real] == ["c"]
    assert len(real[0].incoming) == 4 and len(real[0].outgoing) == 4
    assert len(cross_map.edges) == 8


def test_single_one_way_way():
    smap = build_skeleton(make_net({"a": (0, 0), "m": (5, 1), "b": (10, 0)}, [("w", ["a", "m", "b"], True)]))
    assert list(smap.edges) == ["a>b"]
    assert all(i.pseudo for i in smap.intersections.values())
    assert len(smap.intersections) == 2


def test_plus_of_one_way_ways():
    nodes = {"c": (0, 0), "a": (30, 0), "b": (0, 30), "d": (-30, 0), "e": (0, -30)}
    ways = [("1", ["a", "c"], True), ("2", ["c", "b"], True), ("3", ["d", "c"], True), ("4", ["c", "e"], True)]
    smap = build_skeleton(make_net(nodes, ways))
    assert [i.id for i in smap.real_intersections()] == ["c"]
    assert len(smap.edges) == 4


def test_empty_network_is_empty_map():
    smap = build_skeleton(make_net({}, []))
    assert len(smap) == 0
    with pytest.raises(SkeletonLookupError):
        locate(smap, Pose(0, 0, 0))


def test_twin_polylines_reversed(cross_map):
    for e in cross_map.edges.values():
        twin = cross_map.edges[e.twin]
        assert twin.twin == e.id
        assert np.array_equal(np.asarray(twin.polyline), np.asarray(e.polyline)[::-1])


def test_graph_closure(cross_map):
    for e in cross_map.edges.values():
        assert e.source in cross_map.intersections and e.target in cross_map.intersections
        assert tuple(cross_map.intersections[e.source].center) == tuple(e.polyline[0])


def test_roi_four_way_vertices(cross_map):
    roi = intersection_roi(cross_map, "c")
    assert {tuple(np.round(v, 9)) for v in roi.polygon} == {(10, 0), (0, 10), (-10, 0), (0, -10)}
    assert signed_area(roi.polygon) > 0


def test_roi_pseudo_square(cross_map):
    roi = intersection_roi(cross_map, "e2")
    P = roi.points
    assert np.allclose(P.min(axis=0), [45, -5]) and np.allclose(P.max(axis=0), [55, 5])
    assert len(P) == 4


def test_roi_six_way_hexagon_ccw():
    ang = [0.3 + k * math.pi / 3 for k in range(6)]
    nodes = {"c": (0, 0)}
    ways = []
    order = [3, 0, 5, 1, 4, 2]  # insertion order unrelated to bearing
    for k in order:
        nodes[f"n{k}"] = (12 * math.cos(ang[k]), 12 * math.sin(ang[k]))
        nodes[f"f{k}"] = (40 * math.cos(ang[k]), 40 * math.sin(ang[k]))
        ways.append((f"w{k}", ["c", f"n{k}", f"f{k}"]))
    smap = build_skeleton(make_net(nodes, ways))
    roi = intersection_roi(smap, "c")
    assert len(roi.polygon) == 6
    bearings = [math.atan2(y, x) % (2 * math.pi) for x, y in roi.polygon]
    start = int(np.argmin(bearings))
    rolled = bearings[start:] + bearings[:start]
    assert rolled == sorted(rolled)  # counter-clockwise by bearing
    assert signed_area(roi.polygon) > 0


def test_roi_clamps_far_vertices():
    nodes = {"c": (0, 0), "a": (100, 0), "b": (0, 100), "d": (-100, 0)}
    smap = build_skeleton(make_net(nodes, [("1", ["a", "c", "d"]), ("2", ["c", "b"])]))
    roi = intersection_roi(smap, "c")
    assert np.hypot(*roi.points.T).max() <= 25 + 1e-9
    assert point_in_polygon((0, 0), roi.polygon)


def test_roi_unknown_id(cross_map):
    with pytest.raises(SkeletonLookupError):
        intersection_roi(cross_map, "nope")


def test_locate_center_and_offset(cross_map):
    assert locate(cross_map, Pose(0, 0.0, 0.0)).kind == "in-intersection"
    ref = locate(cross_map, Pose(0, 30.0, 1.0, yaw=0.0))
    assert ref.kind == "on-edge" and ref.element_id == "c>e2"
    assert abs(ref.offset - 30.0) < 0.01


def test_locate_twin_tie_break_by_heading(cross_map):
    assert locate(cross_map, Pose(0, 30.0, 0.0, yaw=math.pi)).element_id == "e2>c"
    assert locate(cross_map, Pose(0, 30.0, 0.0, yaw=0.1)).element_id == "c>e2"


@given(st.floats(-80, 80), st.floats(-80, 80), st.floats(-math.pi, math.pi))
def test_locate_is_total(x, y, yaw):
    nodes = {"c": (0, 0), "e1": (10, 0), "e2": (50, 0), "n1": (0, 10), "n2": (0, 50), "w": (-40, 0)}
    smap = build_skeleton(make_net(nodes, [("h", ["w", "c", "e1", "e2"]), ("v", ["c", "n1", "n2"], True)]))
    ref = locate(smap, Pose(0, x, y, yaw=yaw))
    assert ref.kind in ("on-edge", "in-intersection")
    if ref.kind == "on-edge":
        assert 0.0 <= ref.offset <= smap.edges[ref.element_id].length + 1e-9


@given(st.integers(3, 8), st.floats(8, 30), st.floats(0, 2 * math.pi))
def test_roi_contains_center_for_real_intersections(n_arms, r, rot):
    nodes = {"c": (0.0, 0.0)}
    ways = []
    for k in range(n_arms):
        a = rot + 2 * math.pi * k / n_arms
        nodes[f"n{k}"] = (r * math.cos(a), r * math.sin(a))
        ways.append((f"w{k}", ["c", f"n{k}"]))
    smap = build_skeleton(make_net(nodes, ways))
    roi = intersection_roi(smap, "c")
    assert len(roi.polygon) >= 3
    assert point_in_polygon((0.0, 0.0), roi.polygon)


def _shape(smap: SkeletonMap):
    return (sorted(smap.edges), sorted((i.id, len(i.incoming), len(i.outgoing)) for i in smap.intersections.values()))


def test_osm_round_trip_isomorphic(cross_map):
    nodes = {"c": (0, 0), "e1": (10, 0), "e2": (50, 0), "w1": (-10, 0), "w2": (-50, 0),
             "n1": (0, 10), "n2": (0, 50), "s1": (0, -10), "s2": (0, -50)}
    net = make_net(nodes, [("h", ["w2", "w1", "c", "e1", "e2"]), ("v", ["s2", "s1", "c", "n1", "n2"], True)])
    again = parse_osm(serialize_osm(net))
    a, b = build_skeleton(net), build_skeleton(again)
    assert _shape(a) == _shape(b)
    for eid, e in a.edges.items():
        assert np.allclose(np.diff(e.points, axis=0), np.diff(b.edges[eid].points, axis=0), atol=1e-3)


def test_skeleton_dict_round_trip(cross_map):
    again = SkeletonMap.from_dict(cross_map.to_dict())
    assert again.to_dict() == cross_map.to_dict()

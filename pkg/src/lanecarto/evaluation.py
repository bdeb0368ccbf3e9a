"""Map quality metrics: trajectory RMS, lane polygon IoU, precision/recall.

Estimated lanes are matched to ground-truth lanes per road, greedily by
highest IoU. A matched pair counts as a detection when its IoU is over the
IoU gate or its RMS is under the RMS gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Polygon

from .geometry import point_to_polyline_distance, project_onto_polyline
from .truth import GroundTruth


class AssociationError(ValueError):
    def __init__(self, message: str, ids=()):
        super().__init__(message)
        self.ids = list(ids)


@dataclass(frozen=True)
class Gate:
    iou: float = 0.7
    rms: float = 0.2

    def passes(self, iou: float, rms: float) -> bool:
        return iou > self.iou or rms < self.rms


@dataclass
class Alignment:
    R: np.ndarray
    t: np.ndarray
    degenerate: bool = False

    @property
    def angle(self) -> float:
        return math.atan2(self.R[1, 0], self.R[0, 0])

    def apply(self, pts) -> np.ndarray:
        P = np.asarray(pts, dtype=float)
        return P @ self.R.T + self.t


def rigid_align(est_points, gt_points) -> Alignment:
    """Least-squares rotation and translation mapping ``est`` onto ``gt`` (no scale)."""
    E = np.atleast_2d(np.asarray(est_points, dtype=float))
    G = np.atleast_2d(np.asarray(gt_points, dtype=float))
    if E.shape != G.shape or E.shape[1] != 2:
        raise ValueError("need equal-length (n, 2) correspondences")
    if len(E) < 1:
        raise ValueError("need at least one correspondence")
    ce, cg = E.mean(axis=0), G.mean(axis=0)
    A, B = E - ce, G - cg
    if np.max(np.abs(A)) < 1e-12 or np.max(np.abs(B)) < 1e-12:
        return Alignment(np.eye(2), cg - ce, degenerate=True)
    U, _, Vt = np.linalg.svd(A.T @ B)
    D = np.diag([1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return Alignment(R, cg - R @ ce)


def _nearest_on_polyline(points, poly) -> np.ndarray:
    P = np.asarray(poly, dtype=float)
    _, _, seg = project_onto_polyline(points, P)
    if len(P) == 1:
        return np.repeat(P, len(points), axis=0)
    a, b = P[seg], P[seg + 1]
    ab = b - a
    L2 = np.maximum((ab * ab).sum(axis=1), 1e-300)
    u = np.clip(((points - a) * ab).sum(axis=1) / L2, 0.0, 1.0)
    return a + u[:, None] * ab


def rectify(pairs, iters: int = 20, tol: float = 1e-9) -> Alignment:
    """Global rigid alignment by iterated closest-point association.

    ``pairs`` is a list of (estimated points, ground-truth polyline).
    """
    est = [np.asarray(e, dtype=float).reshape(-1, 2) for e, _ in pairs]
    gts = [np.asarray(g, dtype=float).reshape(-1, 2) for _, g in pairs]
    total = Alignment(np.eye(2), np.zeros(2))
    if not est or sum(len(e) for e in est) < 2:
        return Alignment(np.eye(2), np.zeros(2), degenerate=True)
    prev = np.inf
    for _ in range(iters):
        cur = [total.apply(e) for e in est]
        near = [_nearest_on_polyline(c, g) for c, g in zip(cur, gts)]
        C, N = np.vstack(cur), np.vstack(near)
        err = float(np.mean(np.sum((C - N) ** 2, axis=1)))
        step = rigid_align(C, N)
        total = Alignment(step.R @ total.R, step.R @ total.t + step.t)
        if prev - err < tol:
            break
        prev = err
    return total


def _points_of(est) -> np.ndarray:
    if hasattr(est, "waypoints"):
        return np.asarray(est.waypoints, dtype=float)
    return np.atleast_2d(np.asarray(est, dtype=float))


def trajectory_rms(est, gt, interior_only: bool = True) -> float:
    """RMS perpendicular distance of estimated way points to a ground-truth polyline.

    With ``interior_only``, points whose closest point is a polyline end
    (beyond the truth's extent) are left out, unless that leaves nothing.
    """
    P = _points_of(est)
    G = np.asarray(gt, dtype=float).reshape(-1, 2)
    if len(P) == 0 or len(G) == 0:
        raise ValueError("trajectory_rms needs non-empty inputs")
    dist, arc, _ = project_onto_polyline(P, G)
    if interior_only and len(G) > 1:
        L = float(np.sum(np.hypot(*np.diff(G, axis=0).T)))
        keep = (arc > 1e-9) & (arc < L - 1e-9)
        if keep.any():
            dist = dist[keep]
    return float(np.sqrt(np.mean(dist**2)))


def _as_polygon(poly) -> Polygon:
    P = np.asarray(poly, dtype=float).reshape(-1, 2)
    if len(P) < 3:
        return Polygon()
    g = Polygon(P)
    if not g.is_valid:
        g = shapely.make_valid(g)
    return g


def polygon_iou(a, b) -> float:
    """Intersection over union of two polygons; 0 when the union has no area."""
    ga, gb = _as_polygon(a), _as_polygon(b)
    union = ga.union(gb).area
    if union <= 0:
        return 0.0
    return float(ga.intersection(gb).area / union)


def polygon_overlap(a, b) -> tuple[float, float]:
    """(intersection area, union area)."""
    ga, gb = _as_polygon(a), _as_polygon(b)
    return float(ga.intersection(gb).area), float(ga.union(gb).area)


@dataclass
class LaneMatchResult:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    rms: list[float] = field(default_factory=list)
    iou: list[float] = field(default_factory=list)
    inter: list[float] = field(default_factory=list)
    union: list[float] = field(default_factory=list)
    unmatched_est: list[int] = field(default_factory=list)
    unmatched_gt: list[int] = field(default_factory=list)
    n_est: int = 0
    n_gt: int = 0
    gt_area: list[float] = field(default_factory=list)

    def true_positives(self, gate: Gate) -> int:
        return sum(gate.passes(i, r) for i, r in zip(self.iou, self.rms))


def match_lanes(est_centers, est_polys, gt_centers, gt_polys) -> LaneMatchResult:
    """Greedy one-to-one matching, highest IoU first (ties: lower RMS, then index)."""
    ne, ng = len(est_centers), len(gt_centers)
    res = LaneMatchResult(n_est=ne, n_gt=ng, gt_area=[_as_polygon(p).area for p in gt_polys])
    cand = []
    stats = {}
    for i in range(ne):
        for j in range(ng):
            inter, uni = polygon_overlap(est_polys[i], gt_polys[j])
            iou = inter / uni if uni > 0 else 0.0
            rms = trajectory_rms(est_centers[i], gt_centers[j])
            stats[i, j] = (iou, rms, inter, uni)
            cand.append((-iou, rms, i, j))
    cand.sort()
    used_e, used_g = set(), set()
    for _, _, i, j in cand:
        if i in used_e or j in used_g:
            continue
        used_e.add(i)
        used_g.add(j)
        iou, rms, inter, uni = stats[i, j]
        res.pairs.append((i, j))
        res.iou.append(iou)
        res.rms.append(rms)
        res.inter.append(inter)
        res.union.append(uni)
    res.unmatched_est = [i for i in range(ne) if i not in used_e]
    res.unmatched_gt = [j for j in range(ng) if j not in used_g]
    return res


def precision_recall(matches: LaneMatchResult, gate: Gate = Gate()) -> tuple[float, float]:
    tp = matches.true_positives(gate)
    if matches.n_est == 0:
        return 1.0, (1.0 if matches.n_gt == 0 else 0.0)
    precision = tp / matches.n_est
    recall = tp / matches.n_gt if matches.n_gt else 1.0
    return precision, recall


def miou_scores(matches: LaneMatchResult) -> tuple[float, float]:
    """(per-lane mean, area-weighted) IoU over ground-truth lanes; unmatched lanes score 0."""
    if matches.n_gt == 0:
        v = 1.0 if matches.n_est == 0 else 0.0
        return v, v
    per = np.zeros(matches.n_gt)
    for (i, j), iou in zip(matches.pairs, matches.iou):
        per[j] = iou
    inter = sum(matches.inter)
    union = sum(matches.union) + sum(matches.gt_area[j] for j in matches.unmatched_gt)
    return float(per.mean()), (float(inter / union) if union > 0 else 0.0)


def _summary(matches: LaneMatchResult, gate: Gate) -> dict:
    p, r = precision_recall(matches, gate)
    m1, m2 = miou_scores(matches)
    return {
        "n_est": matches.n_est,
        "n_gt": matches.n_gt,
        "tp": matches.true_positives(gate),
        "precision": p,
        "recall": r,
        "rms": float(np.mean(matches.rms)) if matches.rms else None,
        "miou_per_lane": m1,
        "miou_area_weighted": m2,
        "pairs": [
            {"est": i, "gt": j, "iou": iou, "rms": rms}
            for (i, j), iou, rms in zip(matches.pairs, matches.iou, matches.rms)
        ],
    }


def evaluate(roads: dict, intersections: dict, truth: GroundTruth, gate: Gate = Gate(),
             rectify_map: bool = False) -> dict:
    """Metrics report for built roads/intersections against a ground-truth bundle.

    ``roads`` maps edge id to AtomicRoad, ``intersections`` maps node id to
    Intersection. Roads present in the truth but absent from the map count as
    missed lanes.
    """
    unknown = sorted(set(roads) - set(truth.roads))
    if unknown:
        raise AssociationError(f"map roads missing from truth: {', '.join(unknown)}", unknown)
    truth_nodes = {c.intersection for c in truth.connections} | set(truth.meta.get("intersections", []))
    unknown_i = sorted(i for i, x in intersections.items() if x.connections and i not in truth_nodes)
    if unknown_i:
        raise AssociationError(f"map intersections missing from truth: {', '.join(unknown_i)}", unknown_i)

    align = Alignment(np.eye(2), np.zeros(2))
    if rectify_map:
        pairs = []
        for eid, road in roads.items():
            for ln, gl in zip(road.lanes, truth.roads.get(eid, [])):
                pairs.append((ln.center.waypoints, gl.center))
        align = rectify(pairs)

    report_roads = {}
    lane_map: dict[tuple[str, int], int] = {}
    agg = LaneMatchResult()
    for eid in sorted(truth.roads):
        gt = truth.roads[eid]
        road = roads.get(eid)
        lanes = road.lanes if road is not None else []
        ec = [align.apply(ln.center.waypoints) for ln in lanes]
        ep = [align.apply(ln.bounds.polygon()) for ln in lanes]
        m = match_lanes(ec, ep, [g.center for g in gt], [g.polygon() for g in gt])
        report_roads[eid] = _summary(m, gate)
        for (i, j), iou, rms in zip(m.pairs, m.iou, m.rms):
            if gate.passes(iou, rms):
                lane_map[(eid, i)] = j
        # pool into the aggregate with global ground-truth indices
        base_e, base_g = agg.n_est, agg.n_gt
        agg.pairs += [(base_e + i, base_g + j) for i, j in m.pairs]
        agg.unmatched_est += [base_e + i for i in m.unmatched_est]
        agg.unmatched_gt += [base_g + j for j in m.unmatched_gt]
        for name in ("iou", "rms", "inter", "union", "gt_area"):
            getattr(agg, name).extend(getattr(m, name))
        agg.n_est += m.n_est
        agg.n_gt += m.n_gt
    aggregate = _summary(agg, gate)
    aggregate.pop("pairs")

    topo = _topology(intersections, truth, lane_map, align)
    return {
        "gate": {"iou": gate.iou, "rms": gate.rms},
        "rectified": bool(rectify_map),
        "alignment": {"angle": align.angle, "t": align.t.tolist()},
        "roads": report_roads,
        "aggregate": aggregate,
        "topology": topo,
    }


def _topology(intersections: dict, truth: GroundTruth, lane_map: dict, align: Alignment) -> dict:
    truth_by_key = {c.key: c for c in truth.connections}
    n_est = 0
    tp_keys = []
    curve_rms = {}
    for iid in sorted(intersections):
        for c in intersections[iid].connections:
            n_est += 1
            a = lane_map.get((c.in_edge, c.in_lane))
            b = lane_map.get((c.out_edge, c.out_lane))
            if a is None or b is None:
                continue
            key = (c.in_edge, a, c.out_edge, b)
            if key in truth_by_key and key not in tp_keys:
                tp_keys.append(key)
                gt_curve = truth_by_key[key].curve
                d = point_to_polyline_distance(align.apply(c.curve), gt_curve)
                curve_rms["|".join(map(str, key))] = float(np.sqrt(np.mean(d**2)))
    n_gt = len(truth_by_key)
    tp = len(tp_keys)
    return {
        "n_est": n_est,
        "n_gt": n_gt,
        "tp": tp,
        "precision": tp / n_est if n_est else 1.0,
        "recall": tp / n_gt if n_gt else (1.0 if n_est == 0 else 0.0),
        "curve_rms": curve_rms,
        "curve_rms_mean": float(np.mean(list(curve_rms.values()))) if curve_rms else None,
        "curve_rms_max": float(np.max(list(curve_rms.values()))) if curve_rms else None,
    }

"""Incremental Bowyer-Watson triangulation and the LIDAR ground mesh."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateInputError(ValueError):
    """Fewer than three distinct points, or all of them collinear."""


def _circumcircles(P: np.ndarray, tris: np.ndarray):
    a, b, c = P[tris[:, 0]], P[tris[:, 1]], P[tris[:, 2]]
    bx, by = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    cx, cy = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1]
    d = 2.0 * (bx * cy - by * cx)
    with np.errstate(divide="ignore", invalid="ignore"):
        ux = (cy * (bx * bx + by * by) - by * (cx * cx + cy * cy)) / d
        uy = (bx * (cx * cx + cy * cy) - cx * (bx * bx + by * by)) / d
    r2 = ux * ux + uy * uy
    bad = ~np.isfinite(r2)
    ux = np.where(bad, 0.0, ux)
    uy = np.where(bad, 0.0, uy)
    r2 = np.where(bad, np.inf, r2)
    return ux + a[:, 0], uy + a[:, 1], r2


def dedupe_points(xy: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Indices of first occurrences after snapping to a ``tol`` grid."""
    keys = np.round(np.asarray(xy, dtype=float) / tol).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


def is_collinear(xy: np.ndarray) -> bool:
    c = xy - xy.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return len(s) < 2 or s[1] <= 1e-12 * max(s[0], 1e-300)


def bowyer_watson(xy) -> np.ndarray:
    """Delaunay triangles (index triples, counter-clockwise) of 2D points.

    Points must already be distinct. Raises :class:`DegenerateInputError` for
    fewer than three points or collinear input.
    """
    pts = np.asarray(xy, dtype=float)
    n = len(pts)
    if n < 3 or is_collinear(pts):
        raise DegenerateInputError("need at least 3 non-collinear points")

    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    mid = 0.5 * (lo + hi)
    big = 100.0 * span
    supers = np.array([
        [mid[0] - 2 * big, mid[1] - big],
        [mid[0] + 2 * big, mid[1] - big],
        [mid[0], mid[1] + 2 * big],
    ])
    P = np.vstack([pts, supers])

    cap = 8 * n + 16
    tris = np.zeros((cap, 3), dtype=np.int64)
    ccx = np.zeros(cap)
    ccy = np.zeros(cap)
    cr2 = np.zeros(cap)
    alive = np.zeros(cap, dtype=bool)
    tris[0] = (n, n + 1, n + 2)
    ccx[:1], ccy[:1], cr2[:1] = _circumcircles(P, tris[:1])
    alive[0] = True
    used = 1

    for i in range(n):
        px, py = P[i]
        live = np.flatnonzero(alive[:used])
        d2 = (ccx[live] - px) ** 2 + (ccy[live] - py) ** 2
        bad = live[d2 < cr2[live] * (1.0 - 1e-12)]
        edge_count: dict[tuple[int, int], int] = {}
        edge_dir: dict[tuple[int, int], tuple[int, int]] = {}
        for t in bad:
            a, b, c = tris[t]
            for u, v in ((a, b), (b, c), (c, a)):
                key = (u, v) if u < v else (v, u)
                edge_count[key] = edge_count.get(key, 0) + 1
                edge_dir[key] = (int(u), int(v))
        alive[bad] = False
        boundary = [edge_dir[k] for k, cnt in edge_count.items() if cnt == 1]
        m = len(boundary)
        if used + m > cap:
            keep = np.flatnonzero(alive[:used])
            k = len(keep)
            cap = max(2 * cap, k + m + 16)
            tris = np.concatenate([tris[keep], np.zeros((cap - k, 3), dtype=np.int64)])
            ccx = np.concatenate([ccx[keep], np.zeros(cap - k)])
            ccy = np.concatenate([ccy[keep], np.zeros(cap - k)])
            cr2 = np.concatenate([cr2[keep], np.zeros(cap - k)])
            alive = np.concatenate([np.ones(k, dtype=bool), np.zeros(cap - k, dtype=bool)])
            used = k
        new = np.array([(u, v, i) for u, v in boundary], dtype=np.int64).reshape(-1, 3)
        tris[used:used + m] = new
        ccx[used:used + m], ccy[used:used + m], cr2[used:used + m] = _circumcircles(P, new)
        alive[used:used + m] = True
        used += m

    out = tris[:used][alive[:used]]
    out = out[(out < n).all(axis=1)]
    a, b, c = pts[out[:, 0]], pts[out[:, 1]], pts[out[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    out = out[np.abs(cross) > 0]
    flip = cross[np.abs(cross) > 0] < 0
    out[flip] = out[flip][:, [0, 2, 1]]
    return out


@dataclass
class GroundMesh:
    """Triangulated ground surface; vertices (x, y, z) in meters."""

    vertices: np.ndarray
    triangles: np.ndarray

    def transformed(self, R: np.ndarray, t) -> "GroundMesh":
        """Mesh with vertices mapped by ``R @ v + t`` (same triangles)."""
        v = self.vertices @ np.asarray(R, dtype=float).T + np.asarray(t, dtype=float)
        return GroundMesh(v, self.triangles.copy())

    def height_at(self, xy) -> np.ndarray:
        """Barycentric height under each query point; NaN outside the mesh."""
        q = np.atleast_2d(np.asarray(xy, dtype=float))
        z = np.full(len(q), np.nan)
        if len(q) == 0 or len(self.triangles) == 0:
            return z
        order = np.argsort(q[:, 0], kind="stable")
        qx = q[order, 0]
        qy = q[order, 1]
        V = self.vertices
        tol = 1e-12
        for a, b, c in self.triangles:
            A, B, C = V[a], V[b], V[c]
            x0 = min(A[0], B[0], C[0])
            x1 = max(A[0], B[0], C[0])
            i0 = np.searchsorted(qx, x0, side="left")
            i1 = np.searchsorted(qx, x1, side="right")
            if i1 <= i0:
                continue
            ys = qy[i0:i1]
            y0 = min(A[1], B[1], C[1])
            y1 = max(A[1], B[1], C[1])
            sel = np.flatnonzero((ys >= y0) & (ys <= y1))
            if sel.size == 0:
                continue
            px = qx[i0:i1][sel]
            py = ys[sel]
            det = (B[0] - A[0]) * (C[1] - A[1]) - (C[0] - A[0]) * (B[1] - A[1])
            if det == 0:
                continue
            w1 = ((px - A[0]) * (C[1] - A[1]) - (C[0] - A[0]) * (py - A[1])) / det
            w2 = ((B[0] - A[0]) * (py - A[1]) - (px - A[0]) * (B[1] - A[1])) / det
            inside = (w1 >= -tol) & (w2 >= -tol) & (w1 + w2 <= 1 + tol)
            if not inside.any():
                continue
            idx = order[i0:i1][sel[inside]]
            fresh = np.isnan(z[idx])
            idx = idx[fresh]
            w1, w2 = w1[inside][fresh], w2[inside][fresh]
            z[idx] = A[2] + w1 * (B[2] - A[2]) + w2 * (C[2] - A[2])
        return z


def build_ground_mesh(
    points,
    region: tuple[float, float, float, float] | None = None,
    camera_height: float = 1.5,
    z_band: tuple[float, float] = (-3.0, -0.5),
    dedupe_tol: float = 1e-6,
) -> GroundMesh:
    """Delaunay ground mesh from a vehicle-frame point cloud.

    Points are kept when ``z - camera_height`` lies within ``z_band`` and
    (x, y) falls inside ``region = (xmin, xmax, ymin, ymax)``.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    rel = P[:, 2] - camera_height
    keep = (rel >= z_band[0]) & (rel <= z_band[1])
    if region is not None:
        xmin, xmax, ymin, ymax = region
        keep &= (P[:, 0] >= xmin) & (P[:, 0] <= xmax) & (P[:, 1] >= ymin) & (P[:, 1] <= ymax)
    P = P[keep]
    if len(P) < 3:
        raise DegenerateInputError(f"only {len(P)} usable ground points")
    P = P[dedupe_points(P[:, :2], dedupe_tol)]
    tris = bowyer_watson(P[:, :2])
    return GroundMesh(P, tris)

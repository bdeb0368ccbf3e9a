"""Small planar geometry helpers used across modules."""

from __future__ import annotations

import math

import numpy as np


def wrap_angle(a):
    """Normalize angles to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


def polyline_length(poly) -> float:
    p = np.asarray(poly, dtype=float)
    if len(p) < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(p, axis=0).T)))


def cumulative_length(poly) -> np.ndarray:
    p = np.asarray(poly, dtype=float)
    seg = np.hypot(*np.diff(p, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def project_onto_polyline(points, poly):
    """Closest point on a polyline for each query point.

    Returns (distance, arclength, segment index), each of shape (n,).
    """
    q = np.atleast_2d(np.asarray(points, dtype=float))
    p = np.asarray(poly, dtype=float)
    if len(p) == 1:
        dist = np.hypot(q[:, 0] - p[0, 0], q[:, 1] - p[0, 1])
        return dist, np.zeros(len(q)), np.zeros(len(q), dtype=int)
    chunk = max(1, 2_000_000 // max(len(p) - 1, 1))
    if len(q) > chunk:
        parts = [project_onto_polyline(q[i:i + chunk], p) for i in range(0, len(q), chunk)]
        return tuple(np.concatenate(c) for c in zip(*parts))
    a = p[:-1]
    d = p[1:] - a
    L2 = np.einsum("ij,ij->i", d, d)
    L2safe = np.where(L2 > 0, L2, 1.0)
    rel = q[:, None, :] - a[None, :, :]
    t = np.einsum("nij,ij->ni", rel, d) / L2safe
    t = np.clip(np.where(L2 > 0, t, 0.0), 0.0, 1.0)
    foot = a[None] + t[..., None] * d[None]
    dist = np.hypot(*(q[:, None, :] - foot).transpose(2, 0, 1))
    k = np.argmin(dist, axis=1)
    rows = np.arange(len(q))
    cum = cumulative_length(p)
    arc = cum[k] + t[rows, k] * np.sqrt(L2[k])
    return dist[rows, k], arc, k


def point_to_polyline_distance(points, poly) -> np.ndarray:
    return project_onto_polyline(points, poly)[0]


def resample_polyline(poly, spacing: float) -> np.ndarray:
    p = np.asarray(poly, dtype=float)
    cum = cumulative_length(p)
    total = cum[-1]
    if total == 0:
        return p[:1].copy()
    n = max(int(math.ceil(total / spacing)), 1)
    s = np.linspace(0.0, total, n + 1)
    return np.column_stack([np.interp(s, cum, p[:, 0]), np.interp(s, cum, p[:, 1])])


def point_in_polygon(pt, poly, tol: float = 1e-9) -> bool:
    """Even-odd containment test; points on the boundary count as inside."""
    x, y = float(pt[0]), float(pt[1])
    v = np.asarray(poly, dtype=float)
    n = len(v)
    inside = False
    for i in range(n):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % n]
        # boundary check
        dx, dy = x2 - x1, y2 - y1
        seg2 = dx * dx + dy * dy
        if seg2 > 0:
            t = ((x - x1) * dx + (y - y1) * dy) / seg2
            t = min(max(t, 0.0), 1.0)
            if math.hypot(x - (x1 + t * dx), y - (y1 + t * dy)) <= tol:
                return True
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * dx / dy
            if xi > x:
                inside = not inside
    return inside


def points_in_polygon(points, poly) -> np.ndarray:
    """Vectorized even-odd test (boundary handling is not exact)."""
    q = np.atleast_2d(np.asarray(points, dtype=float))
    v = np.asarray(poly, dtype=float)
    x, y = q[:, 0], q[:, 1]
    inside = np.zeros(len(q), dtype=bool)
    x1, y1 = v[:, 0], v[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for i in range(len(v)):
        crosses = (y1[i] > y) != (y2[i] > y)
        if not crosses.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x1[i] + (y - y1[i]) * (x2[i] - x1[i]) / (y2[i] - y1[i])
        inside ^= crosses & (xi > x)
    return inside


def signed_area(poly) -> float:
    v = np.asarray(poly, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])

"""Density-based clustering of terminal particles."""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy.spatial import cKDTree

NOISE = -1
_UNSEEN = -2


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Label each point with a cluster id (0, 1, ...) or ``NOISE``.

    A point is a core point when at least ``min_pts`` points (itself
    included) lie within ``eps``. Points are scanned in index order and
    clusters grow breadth-first over sorted neighbor lists, so the labeling
    is deterministic for a given input order.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(P)
    labels = np.full(n, _UNSEEN, dtype=np.int64)
    if n == 0:
        return labels
    nbrs = [sorted(v) for v in cKDTree(P).query_ball_point(P, eps)]
    cid = 0
    for i in range(n):
        if labels[i] != _UNSEEN:
            continue
        if len(nbrs[i]) < min_pts:
            labels[i] = NOISE
            continue
        labels[i] = cid
        queue = deque(nbrs[i])
        while queue:
            j = queue.popleft()
            if labels[j] == NOISE:
                labels[j] = cid
            if labels[j] != _UNSEEN:
                continue
            labels[j] = cid
            if len(nbrs[j]) >= min_pts:
                queue.extend(nbrs[j])
        cid += 1
    return labels

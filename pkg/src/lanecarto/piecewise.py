"""Continuous piecewise-linear regression with optimized breakpoints.

The model on ``n`` interior breakpoints is the hinge expansion
``f(s) = c0 + c1*s + sum_i c_{i+2} * max(s - b_i, 0)``. For a fixed set of
breakpoints the coefficients are a linear least-squares solve; breakpoint
placement is searched on a quantile-plus-uniform grid and then refined by coordinate
descent with step halving. Prefix sums over the sorted samples make each
loss evaluation cost ``O(n^3 + n log N)`` instead of ``O(N)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnderdeterminedError(ValueError):
    pass


@dataclass
class PiecewiseFit:
    breakpoints: np.ndarray  # interior breakpoints, strictly increasing
    knots: np.ndarray  # [s_min, *breakpoints, s_max]
    values: np.ndarray  # f at the knots
    loss: float

    @property
    def n_breaks(self) -> int:
        return len(self.breakpoints)

    def __call__(self, s):
        """Evaluate f, continuing the end segments linearly outside the data range."""
        s = np.asarray(s, dtype=float)
        k, v = self.knots, self.values
        out = np.interp(s, k, v)
        lo_slope = (v[1] - v[0]) / (k[1] - k[0])
        hi_slope = (v[-1] - v[-2]) / (k[-1] - k[-2])
        out = np.where(s < k[0], v[0] + lo_slope * (s - k[0]), out)
        return np.where(s > k[-1], v[-1] + hi_slope * (s - k[-1]), out)

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)


def _design(u, bs) -> np.ndarray:
    cols = [np.ones_like(u), u] + [np.maximum(u - b, 0.0) for b in bs]
    return np.column_stack(cols)


def exact_loss(s, d, breakpoints) -> float:
    """Sum of squared residuals of the best fit for fixed breakpoints (direct lstsq)."""
    s = np.asarray(s, dtype=float)
    d = np.asarray(d, dtype=float)
    A = _design(s, np.asarray(breakpoints, dtype=float))
    coef, *_ = np.linalg.lstsq(A, d, rcond=None)
    r = d - A @ coef
    return float(r @ r)


class _PrefixLoss:
    """Fast least-squares loss for a given breakpoint set.

    Every Gram entry of the hinge basis is a polynomial moment of ``u`` or
    ``d`` over a suffix ``u > b``, so cumulative sums over sorted samples give
    the normal equations directly.
    """

    def __init__(self, u, d):
        self.u = u
        n = len(u)
        z = np.zeros(1)
        self.S0 = np.arange(n + 1, dtype=float)
        self.S1 = np.concatenate([z, np.cumsum(u)])
        self.S2 = np.concatenate([z, np.cumsum(u * u)])
        self.D0 = np.concatenate([z, np.cumsum(d)])
        self.D1 = np.concatenate([z, np.cumsum(u * d)])
        self.dd = float(d @ d)

    def _tail(self, arr, i):
        return arr[-1] - arr[i]

    def solve(self, bs):
        """(loss, coefficients) for breakpoints ``bs`` in the scaled frame."""
        m = len(bs)
        idx = np.searchsorted(self.u, bs, side="right")
        G = np.empty((m + 2, m + 2))
        r = np.empty(m + 2)
        S0, S1, S2 = self.S0, self.S1, self.S2
        G[0, 0] = S0[-1]
        G[0, 1] = G[1, 0] = S1[-1]
        G[1, 1] = S2[-1]
        r[0] = self.D0[-1]
        r[1] = self.D1[-1]
        for a in range(m):
            ia, ba = idx[a], bs[a]
            t0, t1, t2 = self._tail(S0, ia), self._tail(S1, ia), self._tail(S2, ia)
            G[0, a + 2] = G[a + 2, 0] = t1 - ba * t0
            G[1, a + 2] = G[a + 2, 1] = t2 - ba * t1
            r[a + 2] = self._tail(self.D1, ia) - ba * self._tail(self.D0, ia)
            for c in range(a, m):
                # (u - ba)(u - bc) over u > max(ba, bc); bs are sorted so bc >= ba
                ic, bc = idx[c], bs[c]
                q0, q1, q2 = self._tail(S0, ic), self._tail(S1, ic), self._tail(S2, ic)
                G[a + 2, c + 2] = G[c + 2, a + 2] = q2 - (ba + bc) * q1 + ba * bc * q0
        try:
            beta = np.linalg.solve(G, r)
        except np.linalg.LinAlgError:
            beta = np.linalg.lstsq(G, r, rcond=None)[0]
        return max(self.dd - float(r @ beta), 0.0), beta

    def loss(self, bs) -> float:
        return self.solve(bs)[0]


def _valid(bs, lo, hi, gap) -> bool:
    if len(bs) == 0:
        return True
    if bs[0] < lo or bs[-1] > hi:
        return False
    return bool(np.all(np.diff(bs) >= gap))


def _refine(pl: _PrefixLoss, bs, step, lo, hi, gap, tol=1e-9, min_step=1e-7):
    """Coordinate descent with step halving."""
    bs = np.array(bs, dtype=float)
    best = pl.loss(bs)
    while step > min_step:
        improved = False
        for i in range(len(bs)):
            for sign in (-1.0, 1.0):
                trial = bs.copy()
                trial[i] += sign * step
                if not _valid(trial, lo, hi, gap):
                    continue
                val = pl.loss(trial)
                if val < best - tol:
                    bs, best, improved = trial, val, True
                    break
        if not improved:
            step *= 0.5
    return bs, best


def fit_piecewise(s, d, n_breaks: int, grid: int = 64, min_gap: float = 0.0) -> PiecewiseFit:
    """Least-squares continuous piecewise-linear fit with ``n_breaks`` interior breakpoints.

    ``min_gap`` is the shortest allowed segment, in units of ``s``.
    """
    s = np.asarray(s, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    if len(s) != len(d):
        raise ValueError("s and d must have equal length")
    if n_breaks < 0:
        raise ValueError("n_breaks must be >= 0")
    if len(s) < 2 * (n_breaks + 1):
        raise UnderdeterminedError(
            f"{len(s)} points cannot determine {n_breaks} breakpoints (need {2 * (n_breaks + 1)})"
        )
    order = np.argsort(s, kind="stable")
    s, d = s[order], d[order]
    smin, smax = float(s[0]), float(s[-1])
    span = smax - smin
    if not span > 0:
        raise UnderdeterminedError("s-span is zero")

    # work in a centered unit-span frame for conditioning
    u = (s - smin) / span
    dmean = float(d.mean())
    pl = _PrefixLoss(u, d - dmean)
    gap = max(1e-3, float(min_gap) / span)
    if (n_breaks + 1) * gap > 1.0:
        raise UnderdeterminedError(f"s-span {span:.3g} too short for {n_breaks} segments of {min_gap}")
    lo, hi = gap, 1.0 - gap

    if n_breaks == 0:
        bu = np.zeros(0)
    else:
        levels = np.linspace(0.0, 1.0, grid + 2)[1:-1]
        # quantiles follow the data; the uniform grid covers sparse ends
        cand = np.unique(np.clip(np.concatenate([np.quantile(u, levels), np.linspace(lo, hi, 4 * grid)]), lo, hi))
        step0 = 1.0 / (4 * grid)
        # single breakpoint: full scan, refine the best few
        scores = np.array([pl.loss(np.array([c])) for c in cand])
        best_bs, best_val = None, np.inf
        for c in cand[np.argsort(scores)[:5]]:
            b, v = _refine(pl, [c], step0, lo, hi, gap)
            if v < best_val:
                best_bs, best_val = b, v
        # further breakpoints: greedy insertion, then joint refinement
        for _ in range(1, n_breaks):
            ins_bs, ins_val = None, np.inf
            for c in cand:
                trial = np.sort(np.append(best_bs, c))
                if not _valid(trial, lo, hi, gap):
                    continue
                v = pl.loss(trial)
                if v < ins_val:
                    ins_bs, ins_val = trial, v
            if ins_bs is None:
                ins_bs = np.linspace(0.0, 1.0, len(best_bs) + 3)[1:-1]
            best_bs, best_val = _refine(pl, ins_bs, step0, lo, hi, gap)
        # alternative start: evenly spread quantiles
        even = np.clip(np.quantile(u, np.linspace(0, 1, n_breaks + 2)[1:-1]), lo, hi)
        if n_breaks > 1 and _valid(even, lo, hi, gap):
            b, v = _refine(pl, even, step0, lo, hi, gap)
            if v < best_val:
                best_bs, best_val = b, v
        bu = np.asarray(best_bs, dtype=float)

    bps = smin + bu * span
    A = _design(s, bps)
    coef, *_ = np.linalg.lstsq(A, d, rcond=None)
    resid = d - A @ coef
    knots = np.concatenate([[smin], bps, [smax]])
    values = _design(knots, bps) @ coef
    return PiecewiseFit(bps, knots, values, float(resid @ resid))


def select_breaks(s, d, max_breaks: int = 6, lam: float | None = None, grid: int = 64,
                  min_gap: float = 0.0) -> PiecewiseFit:
    """Choose the breakpoint count minimizing ``loss + lam * n_breaks``.

    The default ``lam`` is twice the median squared residual of the
    straight-line fit.
    """
    s = np.asarray(s, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    base = fit_piecewise(s, d, 0)
    if lam is None:
        lam = 2.0 * float(np.median((d - base(s)) ** 2))
    best, best_score = base, base.loss
    n_max = min(max_breaks, len(s) // 2 - 1)
    if min_gap > 0:
        n_max = min(n_max, int(np.ptp(s) / min_gap) - 1)
    for n in range(1, n_max + 1):
        fit = fit_piecewise(s, d, n, grid=grid, min_gap=min_gap)
        score = fit.loss + lam * n
        if score < best_score:
            best, best_score = fit, score
    return best

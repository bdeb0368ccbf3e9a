"""Natural cubic spline through a set of knots (tridiagonal solve)."""

from __future__ import annotations

import numpy as np


class DegenerateKnotsError(ValueError):
    pass


def thomas_solve(sub, diag, sup, rhs) -> np.ndarray:
    """Solve a tridiagonal system. ``sub[0]`` and ``sup[-1]`` are ignored."""
    n = len(diag)
    c = np.zeros(n)
    d = np.zeros(n)
    b0 = diag[0]
    c[0] = sup[0] / b0 if n > 1 else 0.0
    d[0] = rhs[0] / b0
    for i in range(1, n):
        m = diag[i] - sub[i] * c[i - 1]
        c[i] = sup[i] / m if i < n - 1 else 0.0
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m
    x = np.zeros(n)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


class NaturalSpline:
    """C2 cubic interpolant with zero second derivative at both ends.

    Per interval ``i`` the curve is
    ``a[i] + b[i]*h + c[i]*h**2 + d[i]*h**3`` with ``h = s - knots[i]``.
    Outside the knot range it continues linearly.
    """

    def __init__(self, knots, values):
        x = np.asarray(knots, dtype=float)
        y = np.asarray(values, dtype=float)
        if x.ndim != 1 or len(x) != len(y):
            raise ValueError("knots and values must be 1D and equal length")
        if len(x) < 2:
            raise DegenerateKnotsError("need at least 2 knots")
        h = np.diff(x)
        if np.any(h <= 0):
            raise DegenerateKnotsError("knots must be strictly increasing")
        n = len(x)
        M = np.zeros(n)
        if n > 2:
            slope = np.diff(y) / h
            rhs = 6.0 * np.diff(slope)
            M[1:-1] = thomas_solve(h[:-1], 2.0 * (h[:-1] + h[1:]), h[1:], rhs)
        self.knots = x
        self.values = y
        self.second = M
        self.a = y[:-1].copy()
        self.b = (y[1:] - y[:-1]) / h - h * (2.0 * M[:-1] + M[1:]) / 6.0
        self.c = M[:-1] / 2.0
        self.d = (M[1:] - M[:-1]) / (6.0 * h)

    def _interval(self, s):
        return np.clip(np.searchsorted(self.knots, s, side="right") - 1, 0, len(self.knots) - 2)

    def __call__(self, s, deriv: int = 0):
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        k0, kn = self.knots[0], self.knots[-1]
        i = self._interval(s)
        h = s - self.knots[i]
        a, b, c, d = self.a[i], self.b[i], self.c[i], self.d[i]
        if deriv == 0:
            out = a + h * (b + h * (c + h * d))
        elif deriv == 1:
            out = b + h * (2.0 * c + 3.0 * h * d)
        elif deriv == 2:
            out = 2.0 * c + 6.0 * h * d
        else:
            raise ValueError("deriv must be 0, 1 or 2")
        # linear continuation beyond the ends
        lo, hi = s < k0, s > kn
        if lo.any() or hi.any():
            b_end = self.b[-1] + (kn - self.knots[-2]) * (2 * self.c[-1] + 3 * (kn - self.knots[-2]) * self.d[-1])
            if deriv == 0:
                out = np.where(lo, self.values[0] + self.b[0] * (s - k0), out)
                out = np.where(hi, self.values[-1] + b_end * (s - kn), out)
            elif deriv == 1:
                out = np.where(lo, self.b[0], out)
                out = np.where(hi, b_end, out)
            else:
                out = np.where(lo | hi, 0.0, out)
        return float(out[0]) if scalar else out

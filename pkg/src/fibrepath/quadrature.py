"""Small numerical helpers: order fits, Richardson extrapolation, trapezoid weights."""

from __future__ import annotations

import numpy as np

DEFAULT_DELTAS = (0.05, 0.025, 0.0125)


class ExtrapolationError(RuntimeError):
    pass


def fit_convergence_order(errors) -> float:
    """Least-squares slope of log(e) against log(h) for a sequence of (h, e) pairs."""
    data = np.asarray(list(errors), float)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 3:
        raise ValueError("need at least three (h, e) pairs")
    if np.any(data <= 0) or not np.all(np.isfinite(data)):
        raise ValueError("step sizes and errors must be positive and finite")
    return float(np.polyfit(np.log(data[:, 0]), np.log(data[:, 1]), 1)[0])


def richardson_to_zero(deltas, values):
    """Evaluate at delta = 0 the interpolating polynomial through (delta_i, value_i).

    Three regulator values give a quadratic in delta. Returns (estimate,
    error_estimate) where the error estimate is the change relative to the
    extrapolation from the two smallest deltas.
    """
    d = np.asarray(deltas, float)
    v = np.asarray(values)
    if d.size < 2 or d.size != v.shape[0]:
        raise ExtrapolationError("need matching deltas and values (at least two)")
    if np.any(d <= 0) or np.unique(d).size != d.size:
        raise ExtrapolationError("deltas must be distinct and positive")

    def neville(dd, vv):
        # Lagrange interpolation at zero
        out = 0.0
        for i in range(dd.size):
            w = 1.0
            for j in range(dd.size):
                if j != i:
                    w *= dd[j] / (dd[j] - dd[i])
            out = out + w * vv[i]
        return out

    est = neville(d, v)
    order = np.argsort(d)[:2]
    lower = neville(d[order], v[order])
    err = np.abs(est - lower)
    if not np.all(np.isfinite(est)):
        raise ExtrapolationError("non-finite extrapolation")
    return est, err


def trapezoid_weights(x) -> np.ndarray:
    x = np.asarray(x, float)
    w = np.full(x.size, x[1] - x[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return w

"""Periodic cubic B-spline evaluation (value and gradient in one pass).

Coefficients come from :func:`scipy.ndimage.spline_filter` with
``mode="grid-wrap"``; positions are in index units.
"""

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _weights(t):
    t2 = t * t
    t3 = t2 * t
    s = 1.0 - t
    w0 = s * s * s / 6.0
    w1 = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0
    w2 = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0
    w3 = t3 / 6.0
    d0 = -s * s / 2.0
    d1 = (3.0 * t2 - 4.0 * t) / 2.0
    d2 = (-3.0 * t2 + 2.0 * t + 1.0) / 2.0
    d3 = t2 / 2.0
    return (w0, w1, w2, w3), (d0, d1, d2, d3)


@numba.njit(cache=True)
def _eval2(c, X, Y, out):
    n0, n1 = c.shape
    for p in range(X.size):
        fx = np.floor(X[p])
        fy = np.floor(Y[p])
        ix = int(fx)
        iy = int(fy)
        wx, dx = _weights(X[p] - fx)
        wy, dy = _weights(Y[p] - fy)
        v = 0.0
        gx = 0.0
        gy = 0.0
        for a in range(4):
            ia = (ix + a - 1) % n0
            rv = 0.0
            rd = 0.0
            for b in range(4):
                cb = c[ia, (iy + b - 1) % n1]
                rv += wy[b] * cb
                rd += dy[b] * cb
            v += wx[a] * rv
            gx += dx[a] * rv
            gy += wx[a] * rd
        out[0, p] = v
        out[1, p] = gx
        out[2, p] = gy


@numba.njit(cache=True)
def _eval1(c, X, out):
    n0 = c.shape[0]
    for p in range(X.size):
        fx = np.floor(X[p])
        ix = int(fx)
        wx, dx = _weights(X[p] - fx)
        v = 0.0
        g = 0.0
        for a in range(4):
            cb = c[(ix + a - 1) % n0]
            v += wx[a] * cb
            g += dx[a] * cb
        out[0, p] = v
        out[1, p] = g


def eval_periodic(coeffs, idx):
    """Value and index-space gradient of a periodic spline.

    ``idx`` has shape ``(coeffs.ndim, ...)``; returns an array of shape
    ``(1 + coeffs.ndim, ...)``.
    """
    shape = idx.shape[1:]
    flat = np.ascontiguousarray(idx.reshape(idx.shape[0], -1), dtype=float)
    out = np.empty((1 + coeffs.ndim, flat.shape[1]))
    if coeffs.ndim == 2:
        _eval2(np.ascontiguousarray(coeffs), flat[0], flat[1], out)
    else:
        _eval1(np.ascontiguousarray(coeffs), flat[0], out)
    return out.reshape((1 + coeffs.ndim,) + shape)

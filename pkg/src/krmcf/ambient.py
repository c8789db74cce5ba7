"""The product Kahler surface ``M1 x M2`` and its Kahler-Ricci flow.

Ambient coordinates are ``(y0, y1)`` on ``M1`` followed by ``(y2, y3)`` on
``M2``.  Each factor carries a diagonal metric ``diag(P, Q)`` in its chart
(``P = Q = e^{2u}`` on the torus, ``P = e^{2u}``, ``Q = e^{2u} sin^2`` in
polar coordinates on the sphere).  The complex structure rotates each factor
positively, and ``omega_i = g_i(J., .)`` is the area form of factor ``i``.
"""

from dataclasses import dataclass

import numpy as np

from .base_geometry import ConformalSurfaceMetric, average_scalar_curvature, ricci_flow_step
from .errors import ChartError


@dataclass(frozen=True, eq=False)
class ProductKahlerAmbient:
    m1: ConformalSurfaceMetric
    m2: ConformalSurfaceMetric

    def __post_init__(self):
        if self.m1.r != self.m2.r:
            raise ValueError("both factors must use the same normalization constant r")

    @property
    def r(self):
        return self.m1.r

    @property
    def factors(self):
        return (self.m1, self.m2)

    def replace(self, m1=None, m2=None):
        return ProductKahlerAmbient(m1 if m1 is not None else self.m1,
                                    m2 if m2 is not None else self.m2)

    def same_average_curvature(self, tol=1e-8):
        """Hypothesis of the long-time graph theorem at the current time."""
        return abs(average_scalar_curvature(self.m1) - average_scalar_curvature(self.m2)) <= tol


@dataclass(frozen=True)
class AmbientPointData:
    point: np.ndarray
    metric: np.ndarray
    inverse_metric: np.ndarray
    christoffel: np.ndarray     # [A, B, C] = Gamma^A_{BC}
    riemann: np.ndarray         # [A, B, C, D], R_ABAB = sectional curvature * |A ^ B|^2
    ricci: np.ndarray
    scalar: float
    omega: np.ndarray
    J: np.ndarray               # column B holds J d_B


class AmbientFields:
    """Ambient metric data evaluated along a set of points.

    Parameters
    ----------
    a : ProductKahlerAmbient
    Y : array, shape (4, ...)
        Ambient coordinates of the points.
    on_grid : (bool, bool)
        Whether the factor coordinates coincide with that factor's grid
        nodes (then values are read directly instead of interpolated).
    curvature : bool
        Also evaluate scalar curvatures and their gradients.
    """

    def __init__(self, a, Y, on_grid=(False, False), curvature=False):
        self.ambient = a
        self.Y = Y
        self.curvature = curvature
        data = []
        for i, m in enumerate(a.factors):
            pos = None if on_grid[i] else Y[2 * i:2 * i + 2]
            d = m.evaluate(pos, curvature=curvature)
            if on_grid[i] and Y.ndim > 1:
                shape = Y.shape[1:]
                d = {k: np.broadcast_to(v, v.shape[:v.ndim - len(shape)] + shape) for k, v in d.items()}
            data.append(d)
        self.data = data
        self.gdiag = np.stack([data[0]["P"], data[0]["Q"], data[1]["P"], data[1]["Q"]])

    # --- metric and complex structure -------------------------------------

    def inner(self, X, Y):
        return np.sum(self.gdiag * X * Y, axis=0)

    def block_inner(self, f, X, Y):
        s = slice(2 * f, 2 * f + 2)
        return np.sum(self.gdiag[s] * X[s] * Y[s], axis=0)

    def J(self, X, sign2=1):
        out = np.empty_like(X)
        for f, sgn in ((0, 1), (1, sign2)):
            P, Q = self.gdiag[2 * f], self.gdiag[2 * f + 1]
            ratio = np.sqrt(P / Q)
            out[2 * f] = -sgn * X[2 * f + 1] / ratio
            out[2 * f + 1] = sgn * X[2 * f] * ratio
        return out

    def omega_factor(self, f, X, Y):
        P, Q = self.gdiag[2 * f], self.gdiag[2 * f + 1]
        a, b = 2 * f, 2 * f + 1
        return np.sqrt(P * Q) * (X[a] * Y[b] - X[b] * Y[a])

    def omega(self, X, Y, sign2=1):
        return self.omega_factor(0, X, Y) + sign2 * self.omega_factor(1, X, Y)

    # --- connection --------------------------------------------------------

    def gamma(self, X, Y):
        """``Gamma^A_BC X^B Y^C`` for the product Levi-Civita connection."""
        out = np.empty(np.broadcast_shapes(X.shape, Y.shape))
        for f in (0, 1):
            d = self.data[f]
            P, Q, dP, dQ = d["P"], d["Q"], d["dP"], d["dQ"]
            a, b = 2 * f, 2 * f + 1
            xa, xb, ya, yb = X[a], X[b], Y[a], Y[b]
            mixed = xa * yb + xb * ya
            out[a] = (dP[0] * xa * ya + dP[1] * mixed - dQ[0] * xb * yb) / (2 * P)
            out[b] = (dQ[1] * xb * yb + dQ[0] * mixed - dP[1] * xa * ya) / (2 * Q)
        return out

    def christoffel(self):
        """Full ``Gamma^A_BC`` array of shape ``(4, 4, 4, ...)``."""
        shape = self.gdiag.shape[1:]
        G = np.zeros((4, 4, 4) + shape)
        eye = np.eye(4)
        for B in range(4):
            for C in range(B, 4):
                G[:, B, C] = self.gamma(_broadcast(eye[B], shape), _broadcast(eye[C], shape))
                G[:, C, B] = G[:, B, C]
        return G

    # --- curvature ---------------------------------------------------------

    def scalar_factors(self):
        return self.data[0]["R"], self.data[1]["R"]

    def grad_scalar(self, f, X):
        """Directional derivative ``X(R_f)`` of factor ``f``'s scalar curvature."""
        dR = self.data[f]["dR"]
        return dR[0] * X[2 * f] + dR[1] * X[2 * f + 1]


def _broadcast(vec, shape):
    return np.broadcast_to(vec.reshape((4,) + (1,) * len(shape)), (4,) + shape)


def ambient_at(a, p):
    """Assemble the full ambient tensors at a single point ``p`` (4 coordinates)."""
    p = np.asarray(p, dtype=float).reshape(4)
    for f, m in enumerate(a.factors):
        if m.base == "round" and not (1e-3 < p[2 * f] < np.pi - 1e-3):
            raise ChartError("point outside the polar chart of a sphere factor")
    Y = p.reshape(4, 1)
    fields = AmbientFields(a, Y, curvature=True)
    gd = fields.gdiag[:, 0]
    metric = np.diag(gd)
    inv = np.diag(1.0 / gd)
    chris = fields.christoffel()[..., 0]
    R1, R2 = (float(x[0]) for x in fields.scalar_factors())
    blocks = [np.diag(np.r_[gd[:2], 0, 0]), np.diag(np.r_[0, 0, gd[2:]])]
    riemann = np.zeros((4, 4, 4, 4))
    ricci = np.zeros((4, 4))
    for Rf, G in zip((R1, R2), blocks):
        riemann += 0.5 * Rf * (np.einsum("ac,bd->abcd", G, G) - np.einsum("ad,bc->abcd", G, G))
        ricci += 0.5 * Rf * G
    omega = np.zeros((4, 4))
    Jm = np.zeros((4, 4))
    for f in (0, 1):
        i, j = 2 * f, 2 * f + 1
        s = np.sqrt(gd[i] * gd[j])
        omega[i, j], omega[j, i] = s, -s
        Jm[j, i] = np.sqrt(gd[i] / gd[j])
        Jm[i, j] = -np.sqrt(gd[j] / gd[i])
    return AmbientPointData(p, metric, inv, chris, riemann, ricci, R1 + R2, omega, Jm)


def kahler_form_pair(a, p):
    """``(omega1, omega2, omega)`` at ``p`` as antisymmetric 4x4 matrices."""
    om = ambient_at(a, p).omega
    w1 = np.zeros((4, 4))
    w2 = np.zeros((4, 4))
    w1[:2, :2] = om[:2, :2]
    w2[2:, 2:] = om[2:, 2:]
    return w1, w2, w1 + w2


def kahler_ricci_step(a, dt, t=None):
    """Advance both factors by the normalized Ricci flow (exact on products)."""
    return ProductKahlerAmbient(ricci_flow_step(a.m1, dt, t), ricci_flow_step(a.m2, dt, t))

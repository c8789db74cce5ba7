"""Conformal metrics on a single compact Riemann surface.

A metric is stored as ``g = exp(2u) g_base`` where ``g_base`` is the flat
metric of the ``2pi``-periodic torus or the round unit sphere.  The metric
evolves by the normalized Ricci flow ``dg/dt = -(R - r) g / 2``, i.e.
``du/dt = -(R - r) / 4``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

from ._spline import eval_periodic
from .errors import BlowUp, ChartError
from .grid import PeriodicGrid

BASES = ("flat", "round")


@dataclass(frozen=True, eq=False)
class ConformalSurfaceMetric:
    """Metric ``exp(2u) g_base`` on ``grid`` with normalization constant ``r``."""

    grid: PeriodicGrid
    u: np.ndarray
    base: str = "flat"
    r: float = 0.0
    _memo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.base not in BASES:
            raise ValueError(f"unknown base geometry {self.base!r}")
        if (self.base == "round") != self.grid.is_sphere:
            raise ValueError("round base requires a sphere grid and flat base a torus grid")
        u = np.asarray(self.u, dtype=float)
        if u.shape != self.grid.shape:
            u = np.broadcast_to(u, self.grid.shape).copy()
        object.__setattr__(self, "u", u)

    @classmethod
    def flat(cls, n, u=0.0, r=0.0, method="fd"):
        return cls(PeriodicGrid.torus(n, method), u, "flat", r)

    @classmethod
    def round(cls, n, u=0.0, r=2.0, method="spectral"):
        return cls(PeriodicGrid.sphere(n, method), u, "round", r)

    def with_u(self, u):
        return ConformalSurfaceMetric(self.grid, u, self.base, self.r)

    @property
    def chi(self):
        return 2 if self.base == "round" else 0

    # cached derived fields ------------------------------------------------

    @cached_property
    def R(self):
        return scalar_curvature(self)

    @cached_property
    def du(self):
        return np.stack([self.grid.d(self.u, 0), self.grid.d(self.u, 1)])

    @cached_property
    def dR(self):
        return np.stack([self.grid.d(self.R, 0), self.grid.d(self.R, 1)])

    def evaluate(self, pos=None, curvature=False):
        """Metric coefficients at ``pos`` (coordinates, shape ``(2, ...)``).

        ``pos=None`` evaluates on the grid nodes.  The metric is diagonal,
        ``diag(P, Q)``; returns a dict with ``P``, ``Q``, their coordinate
        gradients ``dP``, ``dQ`` (shape ``(2, ...)``) and, when requested,
        the scalar curvature ``R`` and its gradient ``dR``.
        """
        if pos is None:
            u, du = self.u, self.du
            theta = self.grid.coords()[0]
            R = self.R if curvature else None
            dR = self.dR if curvature else None
        else:
            pos = np.asarray(pos, dtype=float)
            u, du = self._interp("u", pos)
            theta = pos[0]
            R, dR = self._interp("R", pos) if curvature else (None, None)
        e2u = np.exp(2 * u)
        P = e2u
        dP = 2 * du * e2u
        if self.base == "round":
            s, c = np.sin(theta), np.cos(theta)
            if np.any(np.abs(s) < 1e-4):
                raise ChartError("point too close to a pole of the polar chart")
            Q = e2u * s * s
            dQ = np.stack([(2 * du[0] * s * s + 2 * s * c) * e2u, np.zeros_like(u)])
        else:
            Q = P
            dQ = dP
        out = {"P": P, "Q": Q, "dP": dP, "dQ": dQ}
        if curvature:
            out["R"] = R
            out["dR"] = dR
        return out

    def _interp(self, name, pos):
        """Spline value and coordinate gradient of field ``name`` at ``pos``."""
        coeffs = self._spline(name)
        if self.grid.is_sphere:
            h = self.grid.spacing_x
            out = eval_periodic(coeffs, ((pos[0] + np.pi) / h - 0.5)[None])
            return out[0], np.stack([out[1] / h, np.zeros_like(out[1])])
        idx = np.stack([pos[0] / self.grid.spacing_x, pos[1] / self.grid.spacing_y])
        out = eval_periodic(coeffs, idx)
        return out[0], np.stack([out[1] / self.grid.spacing_x, out[2] / self.grid.spacing_y])

    def _spline(self, name):
        if name in self._memo:
            return self._memo[name]
        src = {"u": self.u, "R": self.R}[name]
        if self.grid.is_sphere:
            # even reflection through the poles gives a 2pi-periodic profile
            col = src[:, 0]
            ext = np.concatenate([col[::-1], col])
            coeffs = ndimage.spline_filter1d(ext, order=3, mode="grid-wrap")
        else:
            coeffs = ndimage.spline_filter(src, order=3, mode="grid-wrap")
        self._memo[name] = coeffs
        return coeffs


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise BlowUp(f"non-finite {what}")


def scalar_curvature(m):
    """Scalar curvature of ``exp(2u) g_base`` (twice the Gauss curvature)."""
    _check_finite(m.u, "conformal factor")
    lap = m.grid.flat_laplacian(m.u)
    if m.base == "round":
        return np.exp(-2 * m.u) * (2.0 - 2.0 * lap)
    return -2.0 * np.exp(-2 * m.u) * lap


def laplace_beltrami(f, m):
    """Laplace-Beltrami operator of ``m``; conformal invariance gives ``e^{-2u} Delta_base``."""
    f = np.asarray(f, dtype=float)
    _check_finite(f, "field")
    return np.exp(-2 * m.u) * m.grid.flat_laplacian(f)


def area_form(m):
    """Area density with respect to ``dx dy`` (or ``dtheta dphi``)."""
    dens = np.exp(2 * m.u)
    if m.base == "round":
        dens = dens * np.sin(m.grid.coords()[0])
    return dens


def total_area(m):
    return m.grid.integrate(area_form(m))


def normalize_area(m):
    """Shift ``u`` by a constant so the area matches the unperturbed base.

    With ``r`` fixed the constant mode obeys ``dA/dt = (r/2) A - 2 pi chi``,
    which is unstable on the sphere, so ``r`` is the average curvature only
    when the area equals that of the round base (on the same grid).
    """
    ref = m.grid.integrate(area_form(m.with_u(np.zeros_like(m.u))))
    return m.with_u(m.u - 0.5 * np.log(total_area(m) / ref))


def average_scalar_curvature(m):
    dmu = area_form(m)
    return m.grid.integrate(m.R * dmu) / m.grid.integrate(dmu)


def gauss_bonnet_defect(m):
    """``int R dmu - 4 pi chi``."""
    return m.grid.integrate(m.R * area_form(m)) - 4 * np.pi * m.chi


def ricci_rhs(m):
    """Time derivative of the conformal factor under the normalized flow."""
    return -0.25 * (m.R - m.r)


def ricci_stable_dt(m, safety=0.2):
    """Parabolic step bound for the Ricci flow of ``m``.

    The flow is ``u_t = exp(-2u) Delta_base u / 2 + ...``; the bound is
    ``safety * h^2 / kappa`` with diffusion coefficient ``kappa = exp(-2u)/2``.
    """
    return safety * m.grid.h ** 2 * 2.0 * float(np.min(np.exp(2 * m.u)))


def ricci_flow_step(m, dt, t=None):
    """One classical RK4 step of ``du/dt = -(R - r)/4``."""
    u0 = m.u
    k1 = ricci_rhs(m)
    k2 = ricci_rhs(m.with_u(u0 + 0.5 * dt * k1))
    k3 = ricci_rhs(m.with_u(u0 + 0.5 * dt * k2))
    k4 = ricci_rhs(m.with_u(u0 + dt * k3))
    u1 = u0 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(u1)):
        raise BlowUp("Ricci flow produced non-finite conformal factor", t)
    return m.with_u(u1)

"""Geometry of a surface immersed in the product Kahler surface.

Surfaces are parametrized over the grid of the first factor,
``F(x) = W x + p(x)`` with a constant ``4 x 2`` matrix ``W`` (winding and the
identity on ``M1``) and periodic fields ``p``.  For graphs ``p[0:2] = 0`` and
``F(x) = (x, f(x))``.  All stencils act on the lift ``p``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .ambient import AmbientFields
from .errors import DegenerateImmersion
from .grid import PeriodicGrid

FRAME_TOL = 1e-6
DET_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GraphImmersion:
    """Immersion ``F = W x + p`` over the grid of ``M1``."""

    grid: PeriodicGrid
    W: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float).reshape(4, 2)
        p = np.asarray(self.p, dtype=float)
        if p.shape != (4,) + self.grid.shape:
            p = np.broadcast_to(p, (4,) + self.grid.shape).copy()
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "p", p)

    @classmethod
    def graph(cls, grid, f, winding=((0, 0), (0, 0))):
        """Graph of ``f(x) = winding @ x + f_periodic(x)`` over ``grid``.

        ``f`` has shape ``(2,) + grid.shape``.  On sphere grids the first
        factor is parametrized by polar coordinates and ``f`` gives the polar
        coordinates of the image in ``M2``.
        """
        W = np.zeros((4, 2))
        W[0, 0] = W[1, 1] = 1.0
        W[2:] = np.asarray(winding, dtype=float)
        p = np.zeros((4,) + grid.shape)
        p[2:] = f
        return cls(grid, W, p)

    @property
    def is_graph(self):
        return (np.array_equal(self.W[:2], np.eye(2)) and not np.any(self.p[:2]))

    @property
    def f(self):
        return self.p[2:]

    def with_p(self, p):
        return GraphImmersion(self.grid, self.W, p)

    def positions(self):
        x, y = self.grid.coords()
        return self.W[:, 0, None, None] * x + self.W[:, 1, None, None] * y + self.p

    @cached_property
    def component_parity(self):
        """Reflection parity of each component of ``p`` across the poles.

        On sphere grids a component that winds with the polar angle is odd,
        all others are even.  Torus grids have no reflections (all ``+1``).
        """
        if not self.grid.is_sphere:
            return np.ones(4)
        return np.where(self.W[:, 0] != 0, -1.0, 1.0)


@dataclass(eq=False)
class SurfaceKinematics:
    """Derivatives of ``F`` and the ambient data along the surface.

    ``X[i, j] = F_ij + Gamma(F_i, F_j)`` is the ambient covariant Hessian.
    Its normal part ``A`` is the second fundamental form in coordinates
    (shape ``(2, 2, 4, ...)``) and its tangential part gives the
    Christoffel symbols ``christoffel[k, a, b]`` of the induced metric.
    """

    F: GraphImmersion
    amb: AmbientFields
    Fi: np.ndarray
    Fij: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    sqrtg: np.ndarray
    X: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self):
        return self.F.grid

    def _tangential(self, Y):
        """Coordinates of the tangential part of ambient vectors ``Y[..., A, grid]``."""
        proj = np.stack([self.amb.inner(Y, self.Fi[0]), self.amb.inner(Y, self.Fi[1])])
        return np.einsum("kl...,l...->k...", self.ginv, proj)

    @property
    def christoffel(self):
        if "chris" not in self._cache:
            X = self.X
            proj = np.stack([np.stack([np.stack([self.amb.inner(X[i, j], self.Fi[k]) for k in range(2)])
                                       for j in range(2)]) for i in range(2)])       # [i, j, l]
            self._cache["chris"] = np.einsum("kl...,ijl...->kij...", self.ginv, proj)
        return self._cache["chris"]

    @property
    def A(self):
        if "A" not in self._cache:
            self._cache["A"] = self.X - np.einsum("kij...,kA...->ijA...", self.christoffel, self.Fi)
        return self._cache["A"]

    @property
    def Hvec(self):
        if "H" not in self._cache:
            gi = self.ginv
            Y = gi[0, 0] * self.X[0, 0] + 2 * gi[0, 1] * self.X[0, 1] + gi[1, 1] * self.X[1, 1]
            T = self._tangential(Y)
            self._cache["H"] = Y - T[0] * self.Fi[0] - T[1] * self.Fi[1]
        return self._cache["H"]

    @property
    def A2(self):
        if "A2" not in self._cache:
            AA = np.einsum("abA...,cdA...,A...->abcd...", self.A, self.A, self.amb.gdiag)
            self._cache["A2"] = np.einsum("ac...,bd...,abcd...->...", self.ginv, self.ginv, AA)
        return self._cache["A2"]

    def integrate(self, field_):
        return self.grid.integrate(field_ * self.sqrtg)

    def gradient(self, phi, parity=1):
        return np.stack([self.grid.d(phi, 0, parity), self.grid.d(phi, 1, parity)])

    def laplacian(self, phi, parity=1):
        """Laplace-Beltrami of a scalar in divergence form."""
        dphi = self.gradient(phi, parity)
        flux = self.sqrtg * np.einsum("ab...,b...->a...", self.ginv, dphi)
        s = self.grid.axis_parity
        dp = self.grid.density_parity
        div = self.grid.d(flux[0], 0, dp * s[0] * parity) + self.grid.d(flux[1], 1, dp * s[1] * parity)
        return div / self.sqrtg

    def tangent_coeffs(self, X):
        """Coordinates ``X^a`` of the tangential part ``X^a F_a``."""
        proj = np.stack([self.amb.inner(X, self.Fi[0]), self.amb.inner(X, self.Fi[1])])
        return np.einsum("ab...,b...->a...", self.ginv, proj)


def kinematics(F, a, curvature=False):
    """Compute :class:`SurfaceKinematics` of ``F`` in ambient ``a``."""
    grid = F.grid
    par = F.component_parity
    p = F.p
    dp = [grid.d(p, 0, par), grid.d(p, 1, par)]
    shape = grid.shape
    Fi = np.stack([F.W[:, i].reshape(4, 1, 1) + dp[i] for i in range(2)])
    Fi = np.broadcast_to(Fi, (2, 4) + shape).copy()
    p00, p01, p11 = grid.hessian(p, par)
    Fij = np.stack([np.stack([p00, p01]), np.stack([p01, p11])])
    on_grid = (F.is_graph and a.m1.grid == grid, False)
    amb = AmbientFields(a, F.positions(), on_grid=on_grid, curvature=curvature)
    g = np.empty((2, 2) + shape)
    for i in range(2):
        for j in range(i, 2):
            g[i, j] = amb.inner(Fi[i], Fi[j])
            g[j, i] = g[i, j]
    det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
    if not np.all(det > DET_TOL):
        raise DegenerateImmersion("induced metric is not positive definite")
    ginv = np.stack([np.stack([g[1, 1], -g[0, 1]]), np.stack([-g[1, 0], g[0, 0]])]) / det
    X = np.empty((2, 2, 4) + shape)
    for i in range(2):
        for j in range(i, 2):
            X[i, j] = Fij[i, j] + amb.gamma(Fi[i], Fi[j])
            X[j, i] = X[i, j]
    return SurfaceKinematics(F, amb, Fi, Fij, g, ginv, np.sqrt(det), X)


def induced_metric(F, a):
    """Pull-back metric ``g_ij``; raises :class:`DegenerateImmersion`."""
    return kinematics(F, a).g


def mean_curvature_vector(F, a, kin=None):
    """Mean curvature vector from ``Delta_g F + g^ij Gamma(F_i, F_j)``.

    This is evaluated in divergence form and does not use the normal
    projection, so it provides an independent check of ``H^alpha e_alpha``.
    """
    kin = kin or kinematics(F, a)
    grid = F.grid
    s = grid.axis_parity
    dpar = grid.density_parity
    flux = kin.sqrtg * np.einsum("ab...,bA...->aA...", kin.ginv, kin.Fi)
    par = F.component_parity
    div = (grid.d(flux[0], 0, dpar * s[0] * par) + grid.d(flux[1], 1, dpar * s[1] * par))
    lap = div / kin.sqrtg
    gam = np.einsum("ab...,abA...->A...", kin.ginv,
                    np.stack([np.stack([kin.amb.gamma(kin.Fi[i], kin.Fi[j]) for j in range(2)])
                              for i in range(2)]))
    return lap + gam


@dataclass(eq=False)
class AdaptedFrameField:
    """Orthonormal frame ``e[0..3]`` with the Kahler form in canonical shape.

    ``e`` has shape ``(4, 4, ...)`` (frame index, ambient component).  ``E``
    expresses the tangent frame in coordinates, ``e_i = E[i, a] F_a``.
    Second fundamental form components ``h[alpha, i, j]`` use ``alpha = 0, 1``
    for the normals ``e3, e4``.
    """

    kin: SurfaceKinematics
    e: np.ndarray
    E: np.ndarray
    cos_alpha: np.ndarray
    sin_alpha: np.ndarray
    degenerate: np.ndarray
    sign2: int = 1
    h: np.ndarray = None
    H: np.ndarray = None

    @property
    def A2(self):
        return np.sum(self.h ** 2, axis=(0, 1, 2))

    @property
    def H2(self):
        return np.sum(self.H ** 2, axis=0)


def adapted_frame(F, a, sign2=1, rotation=None, kin=None, frame_tol=FRAME_TOL):
    """Frame adapted to the Kahler form ``omega1 + sign2 * omega2``.

    ``rotation`` is an optional angle field; the tangent frame is rotated by
    it before the normal frame is built, which exercises gauge invariance.
    """
    kin = kin or kinematics(F, a)
    amb = kin.amb
    F0, F1 = kin.Fi
    n0 = np.sqrt(amb.inner(F0, F0))
    e1 = F0 / n0
    c = amb.inner(F1, e1)
    w = F1 - c * e1
    n1 = np.sqrt(amb.inner(w, w))
    e2 = w / n1
    zero = np.zeros_like(n0)
    E = np.stack([np.stack([1 / n0, zero]), np.stack([-c / (n0 * n1), 1 / n1])])
    if rotation is not None:
        cr, sr = np.cos(rotation), np.sin(rotation)
        e1, e2 = cr * e1 + sr * e2, -sr * e1 + cr * e2
        E = np.stack([cr * E[0] + sr * E[1], -sr * E[0] + cr * E[1]])
    cos_a = np.clip(amb.omega(e1, e2, sign2), -1.0, 1.0)
    sin_a = np.sqrt(np.maximum(1.0 - cos_a ** 2, 0.0))
    degenerate = sin_a < frame_tol
    safe = np.where(degenerate, 1.0, sin_a)
    Je1 = amb.J(e1, sign2)
    Je2 = amb.J(e2, sign2)
    e3 = (Je1 - cos_a * e2) / safe
    e4 = -(Je2 + cos_a * e1) / safe
    if np.any(degenerate):
        f3, f4 = _fallback_normals(amb, e1, e2, cos_a, sign2)
        e3 = np.where(degenerate, f3, e3)
        e4 = np.where(degenerate, f4, e4)
    e = np.stack([e1, e2, e3, e4])
    frame = AdaptedFrameField(kin, e, E, cos_a, sin_a, degenerate, sign2)
    return second_fundamental_form(F, a, frame)


def _fallback_normals(amb, e1, e2, cos_a, sign2):
    shape = e1.shape[1:]
    best = None
    best_norm = np.full(shape, -1.0)
    for A in range(4):
        ax = np.zeros((4,) + shape)
        ax[A] = 1.0 / np.sqrt(amb.gdiag[A])
        nrm = ax - amb.inner(ax, e1) * e1 - amb.inner(ax, e2) * e2
        size = np.sqrt(amb.inner(nrm, nrm))
        take = size > best_norm
        best = nrm if best is None else np.where(take, nrm, best)
        best_norm = np.where(take, size, best_norm)
    e3 = best / best_norm
    e4 = np.where(cos_a >= 0, 1.0, -1.0) * amb.J(e3, sign2)
    for v in (e1, e2, e3):
        e4 = e4 - amb.inner(e4, v) * v
    e4 = e4 / np.sqrt(amb.inner(e4, e4))
    return e3, e4


def second_fundamental_form(F, a, frame):
    """Fill ``frame.h`` and ``frame.H`` from the coordinate second fundamental form."""
    kin = frame.kin
    amb = kin.amb
    # components <A_ab, e_alpha>, then convert coordinate indices to the frame
    Ae = np.stack([np.einsum("abA...,A...,A...->ab...", kin.A, amb.gdiag, frame.e[2 + al])
                   for al in range(2)])
    h = np.einsum("ia...,jb...,nab...->nij...", frame.E, frame.E, Ae)
    frame.h = 0.5 * (h + np.swapaxes(h, 1, 2))
    frame.H = frame.h[:, 0, 0] + frame.h[:, 1, 1]
    return frame


def nabla_J_sq(frame):
    """``|nabla J_Sigma|^2`` from the frame components of ``h``."""
    h3, h4 = frame.h[0], frame.h[1]
    total = 0.0
    for k in range(2):
        total = total + (h4[0, k] + h3[1, k]) ** 2 + (h4[1, k] - h3[0, k]) ** 2
    return total


def nabla_J_sq_components(h):
    """Same as :func:`nabla_J_sq` for a raw ``h`` array of shape ``(2, 2, 2, ...)``."""
    h3, h4 = h[0], h[1]
    return sum((h4[0, k] + h3[1, k]) ** 2 + (h4[1, k] - h3[0, k]) ** 2 for k in range(2))


def graph_gauges(F, a, kin=None):
    """Return ``(v, u1, u2)`` pairing the tangent plane with the factor forms."""
    kin = kin or kinematics(F, a)
    F0, F1 = kin.Fi
    v = kin.amb.omega_factor(0, F0, F1) / kin.sqrtg
    w = kin.amb.omega_factor(1, F0, F1) / kin.sqrtg
    return v, v + w, v - w


def omega_pairings(F, a, kin=None):
    """``(<e1^e2, omega1>, <e1^e2, omega2>)``."""
    kin = kin or kinematics(F, a)
    F0, F1 = kin.Fi
    return (kin.amb.omega_factor(0, F0, F1) / kin.sqrtg,
            kin.amb.omega_factor(1, F0, F1) / kin.sqrtg)


def kahler_angle(F, a, kin=None, sign2=1):
    kin = kin or kinematics(F, a)
    F0, F1 = kin.Fi
    return np.clip(kin.amb.omega(F0, F1, sign2) / kin.sqrtg, -1.0, 1.0)


def frame_derivative(frame, phi, parity=1):
    """Derivatives ``e_i(phi)`` along the tangent frame."""
    grad = frame.kin.gradient(phi, parity)
    return np.einsum("ia...,a...->i...", frame.E, grad)


@dataclass(eq=False)
class GradCosIdentity:
    residual: np.ndarray        # shape (2, ...)
    grad_alpha_sq: np.ndarray
    mask: np.ndarray            # True where the identity is evaluated


def grad_cos_alpha_identity(F, a, frame):
    """Residuals of ``e_1 cos a = (h4_11 + h3_12) sin a`` and its ``e_2`` twin."""
    dcos = frame_derivative(frame, frame.cos_alpha)
    h3, h4 = frame.h[0], frame.h[1]
    s = frame.sin_alpha
    res = np.stack([dcos[0] - (h4[0, 0] + h3[0, 1]) * s,
                    dcos[1] - (h3[1, 1] + h4[0, 1]) * s])
    mask = ~frame.degenerate
    safe = np.where(mask, s, 1.0)
    grad_alpha_sq = np.where(mask, (dcos[0] ** 2 + dcos[1] ** 2) / safe ** 2, 0.0)
    return GradCosIdentity(np.where(mask, res, 0.0), grad_alpha_sq, mask)


def graph_gauge_tangent(kin, velocity=None):
    """Tangent field ``T`` that cancels the ``M1`` component of ``H + T``.

    Returns coordinate components ``T^i`` solving ``T^i dF^(1)/dx^i = -H^(1)``.
    """
    H = kin.Hvec if velocity is None else velocity
    M = kin.Fi[:, :2]               # [i, a] = d_i F^a
    det = M[0, 0] * M[1, 1] - M[1, 0] * M[0, 1]
    if np.any(np.abs(det) < 1e-12):
        return None
    # solve sum_i T^i M[i, a] = -H^a
    T0 = (-H[0] * M[1, 1] + H[1] * M[1, 0]) / det
    T1 = (-H[1] * M[0, 0] + H[0] * M[0, 1]) / det
    return np.stack([T0, T1])

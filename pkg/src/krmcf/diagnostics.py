"""Residuals of the evolution identities, inequalities and trajectory analyses.

Residual checks take a short run of consecutive states produced by the
graph-gauge flow (two states for a forward difference, three for a centered
one).  Time derivatives are taken at fixed parameter values and then
corrected by the tangential transport ``-T . grad`` so they refer to the
normal motion ``dF/dt = H``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .base_geometry import ricci_rhs
from .errors import NoBlowUp
from .immersion import (adapted_frame, frame_derivative, graph_gauge_tangent, graph_gauges,
                        kinematics, nabla_J_sq)

SQRT2_2 = math.sqrt(2) / 2


@dataclass
class ResidualReport:
    """Norms of a pointwise residual field.

    ``order`` is filled in by :func:`with_orders` from a refinement pair.
    """

    name: str
    grid_size: int
    dt: float
    linf: float
    l2: float
    masked_fraction: float = 0.0
    order: float = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.linf < 0 or self.l2 < 0:
            raise ValueError("residual norms are nonnegative")


def observed_order(coarse, fine, ratio=2.0):
    """``log(e_coarse / e_fine) / log(ratio)``; ``inf`` when the fine error is 0."""
    if fine == 0.0:
        return math.inf if coarse > 0 else float("nan")
    if coarse == 0.0:
        return -math.inf
    return math.log(coarse / fine) / math.log(ratio)


def with_orders(reports, key="linf"):
    """Fill ``order`` on each report after the first from consecutive pairs."""
    for prev, cur in zip(reports, reports[1:]):
        ratio = cur.grid_size / prev.grid_size
        cur.order = observed_order(getattr(prev, key), getattr(cur, key), ratio)
    return reports


# ----------------------------------------------------------------------
# ambient curvature along a frame


class FrameCurvature:
    """Ambient Riemann, Ricci and their derivatives in an adapted frame.

    On a product of surfaces ``Rm = sum_f (R_f / 2) (G_f o G_f)`` where
    ``G_f`` is the metric of factor ``f`` restricted to the frame (the
    Kulkarni-Nomizu square), with ``Rm(a, b, a, b)`` the sectional curvature.
    The factor projections are parallel, so derivatives only hit ``R_f``.
    """

    def __init__(self, frame):
        amb = frame.kin.amb
        if not amb.curvature:
            raise ValueError("frame kinematics lack curvature data")
        e = frame.e
        self.G = np.stack([np.stack([np.stack([amb.block_inner(f, e[a], e[b]) for b in range(4)])
                                     for a in range(4)]) for f in range(2)])     # [f, a, b]
        self.Rf = np.stack(amb.scalar_factors())                                  # [f]
        self.dRf = np.stack([np.stack([amb.grad_scalar(f, e[c]) for c in range(4)])
                             for f in range(2)])                                  # [f, c]
        self.r = amb.ambient.r

    def _km(self, coef):
        G = self.G
        return 0.5 * (np.einsum("f...,fac...,fbd...->abcd...", coef, G, G)
                      - np.einsum("f...,fad...,fbc...->abcd...", coef, G, G))

    @property
    def riemann(self):
        return self._km(self.Rf)

    def nabla_riemann(self):
        """``[c, a, b, d, e] = (nabla_{e_c} Rm)(e_a, e_b, e_d, e_e)``."""
        return np.stack([self._km(self.dRf[:, c]) for c in range(4)])

    @property
    def ricci(self):
        return 0.5 * np.einsum("f...,fab...->ab...", self.Rf, self.G)

    def nabla_ricci(self):
        """``[c, a, b] = (nabla_{e_c} Ric)(e_a, e_b)``."""
        return 0.5 * np.einsum("fc...,fab...->cab...", self.dRf, self.G)


def ricci_form_pairing(frame, cur=None):
    """``Ric(J e1, e2)`` for the complex structure the frame is adapted to."""
    amb = frame.kin.amb
    e1, e2 = frame.e[0], frame.e[1]
    R1, R2 = amb.scalar_factors()
    return 0.5 * (R1 * amb.omega_factor(0, e1, e2) + frame.sign2 * R2 * amb.omega_factor(1, e1, e2))


def kahler_angle_curvature_term(frame):
    """Zeroth-order ambient term of the heat equation for ``cos(alpha)``.

    ``-cos^2(a) Ric(Je1, e2) + cos(a) (Ric(e1, e1) + Ric(e2, e2)) / 2``.  The
    first part combines the static curvature term ``sin^2(a) Ric(Je1, e2)``
    with the change of the Kahler form, the second the change of the metric.
    For a Kahler-Einstein metric ``Ric = lambda g`` it is
    ``lambda sin^2(a) cos(a)``.
    """
    amb = frame.kin.amb
    c = frame.cos_alpha
    R1, R2 = amb.scalar_factors()
    e1, e2 = frame.e[0], frame.e[1]
    tr = sum(0.5 * Rf * (amb.block_inner(f, e1, e1) + amb.block_inner(f, e2, e2))
             for f, Rf in ((0, R1), (1, R2)))
    return -c * c * ricci_form_pairing(frame) + 0.5 * c * tr


def r_tilde(kin):
    """``R~ = g^ij Ric(F_i, F_j) / 2``."""
    amb = kin.amb
    R1, R2 = amb.scalar_factors()
    out = 0.0
    for f, Rf in ((0, R1), (1, R2)):
        trf = sum(kin.ginv[i, j] * amb.block_inner(f, kin.Fi[i], kin.Fi[j])
                  for i in range(2) for j in range(2))
        out = out + 0.25 * Rf * trf
    return out


# ----------------------------------------------------------------------
# time derivatives along the flow


@dataclass(eq=False)
class _Stencil:
    """Reference state, its geometry and the time-difference weights."""

    state: object
    kin: object
    T: np.ndarray
    dt: float
    weights: tuple
    states: tuple

    def ddt(self, values, parity=1):
        """Normal-motion time derivative of a scalar sampled on every state."""
        raw = sum(w * v for w, v in zip(self.weights, values)) / self.dt
        grad = self.kin.gradient(values[self.index], parity)
        return raw - self.T[0] * grad[0] - self.T[1] * grad[1]

    @property
    def index(self):
        return len(self.states) // 2 if len(self.states) == 3 else 0


def _stencil(states, gauge="graph"):
    states = tuple(states)
    if len(states) not in (2, 3):
        raise ValueError("residuals need two or three consecutive states")
    if len({(s.surface.grid.n_x, s.surface.grid.topology) for s in states}) != 1:
        raise ValueError("states live on mismatched grids")
    dts = np.diff([s.t for s in states])
    if np.any(dts <= 0) or (len(dts) == 2 and abs(dts[1] - dts[0]) > 1e-9 * dts[0]):
        raise ValueError("states must be equally spaced in time")
    dt = float(dts[0])
    ref = states[1] if len(states) == 3 else states[0]
    kin = kinematics(ref.surface, ref.ambient, curvature=True)
    if gauge == "graph":
        T = graph_gauge_tangent(kin)
    elif gauge == "normal":
        T = np.zeros((2,) + kin.sqrtg.shape)
    else:
        raise ValueError(f"unknown gauge {gauge!r}")
    weights = (-0.5, 0.0, 0.5) if len(states) == 3 else (-1.0, 1.0)
    return _Stencil(ref, kin, T, dt, weights, states)


def _report(name, st, res, mask=None, **extra):
    kin = st.kin
    res = np.abs(np.asarray(res, dtype=float))
    if mask is None:
        mask = np.ones(kin.sqrtg.shape, dtype=bool)
    while res.ndim > mask.ndim:
        res = res.max(axis=0)
    res = np.where(mask, res, 0.0)
    linf = float(res.max()) if np.any(mask) else 0.0
    w = np.where(mask, 1.0, 0.0)
    l2 = math.sqrt(kin.integrate(res ** 2) / max(kin.integrate(w), 1e-300))
    return ResidualReport(name, st.state.surface.grid.n_x, st.dt, linf, l2,
                          float(1.0 - mask.mean()), extra=extra)


def pole_mask(grid, band=0.0):
    """Exclude a fixed angular band around the poles on sphere grids."""
    if not grid.is_sphere:
        return np.ones(grid.shape, dtype=bool)
    theta = grid.coords()[0]
    return (theta > band) & (theta < np.pi - band)


def _frames(st, sign2=1):
    return [adapted_frame(s.surface, s.ambient, sign2=sign2,
                          kin=st.kin if s is st.state else None) for s in st.states]


# ----------------------------------------------------------------------
# residuals of the evolution identities


def residual_cos_alpha(states, gauge="graph", band=0.0):
    """Residual of the heat equation satisfied by the Kahler angle."""
    st = _stencil(states, gauge)
    cosines = [adapted_frame(s.surface, s.ambient).cos_alpha if s is not st.state else None
               for s in st.states]
    frame = adapted_frame(st.state.surface, st.state.ambient, kin=st.kin)
    cosines[st.index] = frame.cos_alpha
    lhs = st.ddt(cosines) - st.kin.laplacian(frame.cos_alpha)
    rhs = nabla_J_sq(frame) * frame.cos_alpha + kahler_angle_curvature_term(frame)
    return _report("cos_alpha", st, lhs - rhs, pole_mask(st.state.surface.grid, band))


def residual_area_element(states, gauge="graph", band=0.0):
    """Pointwise ``d log(dmu)/dt = -|H|^2 - R~ + r/2`` and its integral.

    ``extra["integrated"]`` holds ``|dA/dt - int(-|H|^2 - R~ + r/2) dmu|``.
    """
    st = _stencil(states, gauge)
    kin = st.kin
    grid = kin.grid
    sq = [kinematics(s.surface, s.ambient).sqrtg if s is not st.state else kin.sqrtg
          for s in st.states]
    raw = sum(w * v for w, v in zip(st.weights, sq)) / st.dt
    s_ax = grid.axis_parity
    dp = grid.density_parity
    div = (grid.d(st.T[0] * kin.sqrtg, 0, dp * s_ax[0])
           + grid.d(st.T[1] * kin.sqrtg, 1, dp * s_ax[1]))
    rate = (raw - div) / kin.sqrtg
    H = kin.Hvec
    rhs = -kin.amb.inner(H, H) - r_tilde(kin) + 0.5 * st.state.ambient.r
    areas = [grid.integrate(v) for v in sq]
    dA = sum(w * v for w, v in zip(st.weights, areas)) / st.dt
    integrated = abs(dA - kin.integrate(rhs))
    return _report("area_element", st, rate - rhs, pole_mask(grid, band), integrated=integrated)


def _metric_of(s):
    return kinematics(s.surface, s.ambient).g


def residual_metric_evolution(states, gauge="graph", band=0.0):
    """Residual of ``dg_ij/dt = -2 <H, A_ij> - Ric_ij + (r/2) g_ij``.

    In graph gauge the Lie derivative ``L_T g`` of the reparametrization is
    removed before comparing.
    """
    st = _stencil(states, gauge)
    kin = st.kin
    grid = kin.grid
    s_ax = grid.axis_parity
    gs = [_metric_of(s) if s is not st.state else kin.g for s in st.states]
    raw = sum(w * v for w, v in zip(st.weights, gs)) / st.dt
    T = st.T
    dT = np.stack([np.stack([grid.d(T[k], i, s_ax[k]) for k in range(2)]) for i in range(2)])  # [i, k]
    g = kin.g
    amb = kin.amb
    R1, R2 = amb.scalar_factors()
    H = kin.Hvec
    res = np.empty_like(g)
    for i in range(2):
        for j in range(2):
            dg = kin.gradient(g[i, j], s_ax[i] * s_ax[j])
            lie = (T[0] * dg[0] + T[1] * dg[1]
                   + sum(g[k, j] * dT[i, k] + g[i, k] * dT[j, k] for k in range(2)))
            ric = 0.5 * (R1 * amb.block_inner(0, kin.Fi[i], kin.Fi[j])
                         + R2 * amb.block_inner(1, kin.Fi[i], kin.Fi[j]))
            rhs = -2 * amb.inner(H, kin.A[i, j]) - ric + 0.5 * st.state.ambient.r * g[i, j]
            res[i, j] = raw[i, j] - lie - rhs
    return _report("metric", st, res.reshape((4,) + g.shape[2:]), pole_mask(grid, band))


def residual_u_gauges(states, gauge="graph", band=0.0, frame_tol=1e-3):
    """Residuals of the heat equations of ``u1``, ``u2`` and ``u = u1 + u2``.

    ``u1`` is the Kahler angle cosine for ``omega1 + omega2`` and ``u2`` for
    ``omega1 - omega2``; each uses its own adapted frame.  The combined
    equation is checked in the form
    ``u |A|^2 + 2 (u1 - u2) X + (curvature terms)`` with
    ``X = sum_k h4_1k h3_2k - h4_2k h3_1k`` in the first frame.
    Points where either frame is (nearly) degenerate are masked.
    """
    st = _stencil(states, gauge)
    kin = st.kin
    out = {}
    mask = pole_mask(kin.grid, band)
    lhs_sum = 0.0
    rhs_parts = []
    frames = []
    for name, sign2 in (("u1", 1), ("u2", -1)):
        vals = []
        for s in st.states:
            if s is st.state:
                fr = adapted_frame(s.surface, s.ambient, sign2=sign2, kin=kin)
                frames.append(fr)
                vals.append(fr.cos_alpha)
            else:
                vals.append(adapted_frame(s.surface, s.ambient, sign2=sign2).cos_alpha)
        fr = frames[-1]
        lhs = st.ddt(vals) - kin.laplacian(fr.cos_alpha)
        curv = kahler_angle_curvature_term(fr)
        rhs = nabla_J_sq(fr) * fr.cos_alpha + curv
        mask = mask & (fr.sin_alpha > frame_tol)
        out[name] = lhs - rhs
        lhs_sum = lhs_sum + lhs
        rhs_parts.append(curv)
    f1, f2 = frames
    h3, h4 = f1.h[0], f1.h[1]
    X = sum(h4[0, k] * h3[1, k] - h4[1, k] * h3[0, k] for k in range(2))
    u1, u2 = f1.cos_alpha, f2.cos_alpha
    combined = lhs_sum - ((u1 + u2) * f1.A2 + 2 * (u1 - u2) * X + rhs_parts[0] + rhs_parts[1])
    reports = {k: _report(k, st, v, mask) for k, v in out.items()}
    reports["u"] = _report("u", st, combined, mask)
    return reports


def nabla_A_sq(kin):
    """``|nabla A|^2`` of the second fundamental form (normal connection)."""
    grid = kin.grid
    amb = kin.amb
    s_ax = grid.axis_parity
    par = kin.F.component_parity
    A = kin.A
    chris = kin.christoffel
    D = np.empty((2, 2, 2) + A.shape[2:])          # [k, i, j, A]
    for k in range(2):
        for i in range(2):
            for j in range(i, 2):
                dA = grid.d(A[i, j], k, par * s_ax[i] * s_ax[j]) + amb.gamma(kin.Fi[k], A[i, j])
                dA = dA - sum(chris[l, k, i] * A[l, j] + chris[l, k, j] * A[i, l] for l in range(2))
                # normal projection
                tc = kin.tangent_coeffs(dA)
                D[k, i, j] = dA - tc[0] * kin.Fi[0] - tc[1] * kin.Fi[1]
                D[k, j, i] = D[k, i, j]
    gi = kin.ginv
    total = 0.0
    for k in range(2):
        for i in range(2):
            for j in range(2):
                for a in range(2):
                    for b in range(2):
                        for c in range(2):
                            w = gi[k, a] * gi[i, b] * gi[j, c]
                            total = total + w * amb.inner(D[k, i, j], D[a, b, c])
    return total


def a2_reaction_terms(frame):
    """All zeroth-order terms of the heat equation of ``|A|^2`` in a frame.

    Returns a dict with the quartic part, the static curvature part, the
    covariant-derivative part and the part produced by the ambient flow
    ``dg/dt = -Ric + (r/2) g``.  Frame indices: tangent ``0, 1``, normal ``2, 3``.
    """
    fc = FrameCurvature(frame)
    h = np.zeros((4, 2, 2) + frame.cos_alpha.shape)
    h[2:] = frame.h                           # h[alpha, i, j], alpha in {2, 3}
    Rm = fc.riemann
    dRm = fc.nabla_riemann()
    Ric = fc.ricci
    dRic = fc.nabla_ricci()
    T = (0, 1)
    N = (2, 3)
    quart = 0.0
    for al in N:
        for ga in N:
            for i in T:
                for m in T:
                    term = sum(h[al, i, k] * h[ga, m, k] - h[al, m, k] * h[ga, i, k] for k in T)
                    quart = quart + term ** 2
    for i in T:
        for j in T:
            for m in T:
                for k in T:
                    quart = quart + sum(h[al, i, j] * h[al, m, k] for al in N) ** 2
    quart = 2 * quart
    static = 0.0
    deriv = 0.0
    flow = 0.0
    for al in N:
        for i in T:
            for j in T:
                hij = h[al, i, j]
                deriv = deriv + 2 * hij * sum(dRm[k, al, i, j, k] + dRm[j, al, k, i, k] for k in T)
                for k in T:
                    for l in T:
                        static = static - 4 * Rm[l, i, j, k] * h[al, l, k] * hij
                        static = static - 4 * Rm[l, k, i, k] * h[al, l, j] * hij
                    for be in N:
                        static = static + 8 * Rm[al, be, j, k] * h[be, i, k] * hij
                for be in N:
                    static = static + 2 * sum(Rm[al, k, be, k] for k in T) * h[be, i, j] * hij
                    flow = flow - Ric[al, be] * h[be, i, j] * hij
                flow = flow + 2 * sum(Ric[i, k] * h[al, k, j] for k in T) * hij
                flow = flow - hij * (dRic[i, j, al] + dRic[j, i, al] - dRic[al, i, j])
    flow = flow - 0.5 * fc.r * frame.A2
    return {"quartic": quart, "static": static, "derivative": deriv, "flow": flow}


def residual_A2(states, gauge="graph", band=0.0, frame_tol=1e-3):
    """Residual of the heat equation of ``|A|^2``.

    ``d|A|^2/dt - Delta|A|^2 + 2|nabla A|^2`` minus the reaction terms of
    :func:`a2_reaction_terms`.  Near-degenerate frames are masked (the
    reaction terms are frame invariant but the fallback frame is only
    continuous away from them).
    """
    st = _stencil(states, gauge)
    kin = st.kin
    vals = [kin.A2 if s is st.state else kinematics(s.surface, s.ambient).A2 for s in st.states]
    frame = adapted_frame(st.state.surface, st.state.ambient, kin=kin)
    lhs = st.ddt(vals) - kin.laplacian(kin.A2) + 2 * nabla_A_sq(kin)
    terms = a2_reaction_terms(frame)
    res = lhs - sum(terms.values())
    mask = pole_mask(kin.grid, band) & ~(frame.sin_alpha < frame_tol) if frame_tol else pole_mask(kin.grid, band)
    return _report("A2", st, res, mask)


def residual_suite(state, dt_scale=0.05):
    """All evolution-identity residuals at ``state``.

    Three consecutive coupled steps of size ``dt_scale * h^2`` feed centered
    time differences.  Returns a list of :class:`ResidualReport`.
    """
    from .flow import run_states

    states = run_states(state, dt_scale * state.surface.grid.h ** 2, 2)
    reps = [residual_cos_alpha(states), residual_area_element(states),
            residual_metric_evolution(states), residual_A2(states)]
    reps.extend(residual_u_gauges(states).values())
    return reps


# ----------------------------------------------------------------------
# pointwise inequalities


@dataclass
class InequalityVerdict:
    name: str
    worst_margin: float
    tolerance: float
    masked_fraction: float = 0.0

    @property
    def holds(self):
        return self.worst_margin >= -self.tolerance


def inequality_suite(state, lemma_slack=None, frame=None):
    """Check the pointwise inequalities on one state.

    * ``|nabla J|^2 - |H|^2 / 2 >= 0`` (algebraic; rounding tolerance),
    * ``|nabla cos a|^2 <= |nabla J|^2 sin^2 a`` (the gradient-of-angle bound
      in a division-free form; finite-difference slack, by default
      ``1e-2 (h / h_128)^2``),
    * ``v^2 + w^2 <= 1`` for the factor pairings,
    * ``u_i >= v - sqrt(2)/2`` wherever ``v >= sqrt(2)/2``.
    """
    frame = frame or adapted_frame(state.surface, state.ambient)
    kin = frame.kin
    grid = kin.grid
    if lemma_slack is None:
        lemma_slack = 1e-2 * (grid.h / (2 * np.pi / 128)) ** 2
    nj = nabla_J_sq(frame)
    out = {}
    out["nablaJ_vs_H"] = InequalityVerdict("nablaJ_vs_H", float(np.min(nj - 0.5 * frame.H2)), 1e-12)
    dcos = frame_derivative(frame, frame.cos_alpha)
    lemma = nj * frame.sin_alpha ** 2 - (dcos[0] ** 2 + dcos[1] ** 2)
    out["grad_angle"] = InequalityVerdict("grad_angle", float(np.min(lemma)), lemma_slack)
    v, u1, u2 = graph_gauges(state.surface, state.ambient, kin)
    w = u1 - v
    out["pairings"] = InequalityVerdict("pairings", float(np.min(1.0 - v * v - w * w)), 1e-12)
    sel = v >= SQRT2_2
    if np.any(sel):
        m = float(np.min(np.minimum(u1, u2)[sel] - (v[sel] - SQRT2_2)))
    else:
        m = math.inf
    out["gauge_lower_bound"] = InequalityVerdict("gauge_lower_bound", m, 1e-12,
                                                 float(1.0 - sel.mean()))
    return out


# ----------------------------------------------------------------------
# weighted monotonicity


def smooth_cutoff(dist, r):
    """``1`` on ``[0, r]``, ``0`` beyond ``2r``, smooth in between."""
    s = np.clip((dist - r) / r, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return 1.0 - a / (a + b)


@dataclass
class MonotonicityProbe:
    """Center, terminal time, cutoff radius and weight of a Gaussian density.

    ``weight`` is ``"angle"`` (``1 / (exp(R0 t) cos a)``), ``"gauge"``
    (``1 / (u1 + u2)``) or ``"none"``.  ``R0 = max(0, -min R)`` is frozen
    when the probe is built.
    """

    center: np.ndarray
    t0: float
    radius: float
    weight: str = "angle"
    R0: float = 0.0
    scale: np.ndarray = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(4)
        if self.weight not in ("angle", "gauge", "none"):
            raise ValueError(f"unknown weight mode {self.weight!r}")
        if self.radius <= 0:
            raise ValueError("cutoff radius must be positive")

    @classmethod
    def at_max_curvature(cls, state, t0, radius=None, weight="angle"):
        """Probe centered at the surface point of largest ``|A|^2``."""
        kin = kinematics(state.surface, state.ambient, curvature=True)
        k = np.unravel_index(np.argmax(kin.A2), kin.A2.shape)
        X0 = state.surface.positions()[(slice(None),) + k]
        R = sum(kin.amb.scalar_factors())
        R0 = max(0.0, -float(np.min(R)))
        radius = radius if radius is not None else 0.45 * injectivity_proxy(state.ambient)
        probe = cls(X0, t0, radius, weight, R0)
        probe.validate(state.ambient)
        return probe

    def validate(self, ambient):
        if 2 * self.radius >= injectivity_proxy(ambient):
            raise ValueError("probe cutoff 2r exceeds the injectivity radius proxy")
        for f, m in enumerate(ambient.factors):
            if m.base == "round" and not (0.05 < self.center[2 * f] < np.pi - 0.05):
                raise ValueError("probe center too close to a polar-chart pole")


def injectivity_proxy(ambient):
    """``pi min e^u`` on tori and ``pi/2 min e^u`` on spheres (smallest factor)."""
    vals = []
    for m in ambient.factors:
        c = np.pi if m.base == "flat" else np.pi / 2
        vals.append(c * float(np.exp(np.min(m.u))))
    return min(vals)


def _normal_coordinates(state, probe, Y=None):
    """First-order normal coordinates of the surface points about the center."""
    Y = state.surface.positions() if Y is None else Y
    X0 = probe.center
    amb = state.ambient
    from .ambient import AmbientFields
    gd = AmbientFields(amb, X0.reshape(4, 1)).gdiag[:, 0]
    z = np.empty_like(Y)
    for f, m in enumerate(amb.factors):
        a, b = 2 * f, 2 * f + 1
        da = Y[a] - X0[a]
        db = Y[b] - X0[b]
        db = (db + np.pi) % (2 * np.pi) - np.pi
        if m.base == "flat":
            da = (da + np.pi) % (2 * np.pi) - np.pi
        z[a] = np.sqrt(gd[a]) * da
        z[b] = np.sqrt(gd[b]) * db
    return z


def phi_value(state, probe):
    """``Phi(t) = int weight * cutoff * rho dmu`` for one state."""
    tau = probe.t0 - state.t
    if tau <= 0:
        raise ValueError("probe samples must satisfy t < t0")
    frame = adapted_frame(state.surface, state.ambient)
    kin = frame.kin
    F = state.surface
    if F.grid.is_sphere:
        # the Gaussian is not rotationally symmetric: average it over the
        # orbit F(theta, phi + s) = F(theta, phi) + W[:, 1] s
        shifts = np.arange(F.grid.n_y) * (2 * np.pi / F.grid.n_y)
        Y = F.positions() + F.W[:, 1, None, None] * shifts
        kern = np.mean(_kernel(state, probe, Y, tau), axis=-1, keepdims=True)
    else:
        kern = _kernel(state, probe, None, tau)
    if probe.weight == "angle":
        w = 1.0 / (np.exp(probe.R0 * state.t) * frame.cos_alpha)
    elif probe.weight == "gauge":
        _, u1, u2 = graph_gauges(state.surface, state.ambient, kin)
        w = 1.0 / (u1 + u2)
    else:
        w = 1.0
    return kin.integrate(w * kern)


def _kernel(state, probe, Y, tau):
    z = _normal_coordinates(state, probe, Y)
    d2 = np.sum(z * z, axis=0)
    rho = np.exp(-d2 / (4 * tau)) / (4 * np.pi * tau)
    return smooth_cutoff(np.sqrt(d2), probe.radius) * rho


@dataclass
class PhiReport:
    times: np.ndarray
    phi: np.ndarray
    max_increase: float     # largest increase between consecutive samples
    c1: float               # smallest c1 with c2 = 0
    c2: float               # smallest c2 with c1 = 0


def fit_monotonicity_constants(times, phi, t0):
    """Smallest ``c1`` (with ``c2 = 0``) and ``c2`` (with ``c1 = 0``) making
    ``exp(c1 sqrt(t0 - t)) Phi + c2 (t0 - t)`` non-increasing on the samples."""
    times = np.asarray(times, dtype=float)
    phi = np.asarray(phi, dtype=float)
    tau = t0 - times
    s = np.sqrt(tau)
    inc = np.diff(phi)
    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = np.max(np.where(inc > 0, np.log(phi[1:] / phi[:-1]) / (s[:-1] - s[1:]), 0.0), initial=0.0)
        c2 = np.max(np.where(inc > 0, inc / (tau[:-1] - tau[1:]), 0.0), initial=0.0)
    return float(max(c1, 0.0)), float(max(c2, 0.0))


def phi_functional(traj, probe):
    """Phi series of a trajectory (recorded by ``run``) plus fitted constants."""
    t = np.asarray(traj.times, dtype=float)
    phi = np.asarray(traj.phi, dtype=float)
    ok = np.isfinite(phi) & (t < probe.t0)
    t, phi = t[ok], phi[ok]
    if len(t) < 2:
        raise ValueError("need at least two probe samples before t0")
    c1, c2 = fit_monotonicity_constants(t, phi, probe.t0)
    return PhiReport(t, phi, float(np.max(np.diff(phi), initial=-np.inf)), c1, c2)


# ----------------------------------------------------------------------
# trajectory analyses


def _time_derivative(t, y):
    return np.gradient(np.asarray(y, dtype=float), np.asarray(t, dtype=float), edge_order=2)


def _integral(t, y):
    """Composite Simpson on uniform samples (trapezoid if the count is even)."""
    from scipy.integrate import simpson
    return float(simpson(np.asarray(y, dtype=float), x=np.asarray(t, dtype=float)))


@dataclass
class BalanceReport:
    name: str
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    max_residual: float
    integrated_residual: float
    extra: dict = field(default_factory=dict)


def area_balance(traj, t_end=None):
    """Total-area law ``dA/dt = int(-|H|^2 - R~ + r/2) dmu`` along a trajectory.

    ``integrated_residual`` is ``|A(t_end) - A(0) - int_0^t_end rhs dt|``.
    """
    t = traj.column("times")
    sel = slice(None) if t_end is None else t <= t_end + 1e-12
    t = t[sel]
    A = traj.column("area")[sel]
    rhs = -traj.column("int_H2")[sel] - traj.column("int_Rtilde")[sel] + 0.5 * traj.r * A
    lhs = _time_derivative(t, A)
    integ = abs(A[-1] - A[0] - _integral(t, rhs))
    return BalanceReport("area", t, lhs, rhs, float(np.max(np.abs(lhs - rhs))), integ)


def symplectic_balance(traj):
    """Balance of ``d/dt int(1 - cos a) dmu`` and the running L1 norm of ``H``.

    The right-hand side accounts for the evolving Kahler form,
    ``-int|H|^2 - int(R~ - r/2) + int(Ric(Je1, e2) - (r/2) cos a)``.
    ``extra["as_stated"]`` holds the residual of the shorter form
    ``-int|H|^2 - int(R~ - r)``, which drops the Kahler-form terms and
    agrees with the full one only when both vanish (e.g. flat factors).
    """
    t = traj.column("times")
    y = traj.column("int_one_minus_cos")
    A = traj.column("area")
    r = traj.r
    H2 = traj.column("int_H2")
    Rt = traj.column("int_Rtilde")
    rhs = -H2 - (Rt - 0.5 * r * A) + (traj.column("int_ric_form") - 0.5 * r * traj.column("int_cos"))
    short = -H2 - (Rt - r * A)
    lhs = _time_derivative(t, y)
    integ = abs(y[-1] - y[0] - _integral(t, rhs))
    extra = {"as_stated": float(np.max(np.abs(lhs - short))),
             "as_stated_integrated": abs(y[-1] - y[0] - _integral(t, short)),
             "L1_H_cum": traj.column("L1_H_cum")}
    return BalanceReport("symplectic", t, lhs, rhs, float(np.max(np.abs(lhs - rhs))), integ, extra)


def fit_decay_rate(t, y, t_min=None):
    """Rate ``lam`` of a least-squares fit ``y ~ c exp(-lam t)`` over ``t >= t_min``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = (y > 0) & np.isfinite(y)
    if t_min is not None:
        sel &= t >= t_min
    if sel.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(t[sel], np.log(y[sel]), 1)
    return float(-slope)


@dataclass
class SingularityReport:
    cause: str
    T_est: float
    T_uncertainty: float
    times: np.ndarray
    U: np.ndarray
    scaled: np.ndarray          # (T - t) U(t)
    sup_scaled: float
    lower_bound_ok: bool
    lower_bound_margin: float
    tail_monotone: bool
    label: str


def _blowup_time(t, U, frac):
    k = max(3, int(len(t) * frac))
    tt, inv = t[-k:], 1.0 / U[-k:]
    slope, icpt = np.polyfit(tt, inv, 1)
    if slope >= 0:
        return float(t[-1])
    return float(-icpt / slope)


def singularity_tracker(traj, window=0.2):
    """Classify the termination of a run by the growth of ``U = max|A|^2``.

    ``T`` is extrapolated from a linear fit of ``1/U`` on the final part of
    the per-step series (two window lengths give the uncertainty).  The
    lower bound ``U >= 1 / (4 sqrt(2) (T - t))`` is checked on the final
    window; the label (type I if ``(T - t) U`` levels off over the last
    decade of ``T - t``, type II if it keeps growing) is an observation.
    """
    if traj.cause == "completed":
        raise NoBlowUp("trajectory completed without a singularity")
    t = np.asarray(traj.step_times, dtype=float)
    U = np.asarray(traj.step_A2, dtype=float)
    if len(t) < 8:
        raise ValueError("too few steps to analyze the termination")
    T1 = _blowup_time(t, U, window)
    T2 = _blowup_time(t, U, window / 2)
    T = max(T1, T2, float(t[-1]))
    unc = abs(T1 - T2)
    gap = np.maximum(T - t, 1e-300)
    scaled = gap * U
    k = max(3, int(len(t) * window))
    tail = slice(len(t) - k, len(t))
    bound = 1.0 / (4 * np.sqrt(2) * np.maximum(T + unc - t[tail], 1e-300))
    margin = float(np.min(U[tail] - bound))
    tail_monotone = bool(np.all(np.diff(U[tail]) >= -1e-12 * U[tail][:-1]))
    # growth of (T - t) U over the last decade of T - t
    last = gap[-1]
    dec = (gap <= 10 * max(last, 1e-12)) & (gap > 0)
    label = "undetermined"
    if dec.sum() >= 3:
        slope = np.polyfit(np.log(gap[dec]), np.log(np.maximum(scaled[dec], 1e-300)), 1)[0]
        label = "type I (plateau)" if slope > -0.25 else "type II (growing)"
    return SingularityReport(traj.cause, T, unc, t, U, scaled, float(np.max(scaled)),
                             margin >= 0, margin, tail_monotone, label)

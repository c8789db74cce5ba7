"""Time evolution of the coupled Kahler-Ricci / mean curvature flow.

The surface is advanced in graph gauge: the velocity ``H + T`` with ``T``
tangent is chosen so that the parametrization stays a graph over ``M1``.
Tangential motion only reparametrizes the surface, so the swept surfaces are
those of the mean curvature flow.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ambient import ProductKahlerAmbient, kahler_ricci_step
from .base_geometry import ricci_rhs, ricci_stable_dt
from .errors import BlowUp, DegenerateImmersion, GraphDegenerate
from .immersion import (GraphImmersion, adapted_frame, graph_gauge_tangent, graph_gauges,
                        kinematics, nabla_J_sq)

GRAPH_TOL = 1e-6
BLOWUP_FACTOR = 1e6


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    ambient: ProductKahlerAmbient
    surface: GraphImmersion

    def __post_init__(self):
        if self.surface.grid != self.ambient.m1.grid:
            raise ValueError("the surface must be parametrized by the grid of M1")


def graph_velocity(kin, t=None):
    """``df/dt`` in graph gauge plus the gauge field ``T`` (coordinates)."""
    T = graph_gauge_tangent(kin)
    if T is None:
        raise GraphDegenerate("graph gauge system is singular", t)
    H = kin.Hvec
    vel = H[2:] + T[0] * kin.Fi[0, 2:] + T[1] * kin.Fi[1, 2:]
    return vel, T


def _check_graph(kin, t):
    v = kin.amb.omega_factor(0, kin.Fi[0], kin.Fi[1]) / kin.sqrtg
    if np.min(v) <= GRAPH_TOL:
        raise GraphDegenerate("surface is no longer a graph over M1 (v -> 0)", t)


def _surface_rhs(F, a, t):
    try:
        kin = kinematics(F, a)
    except DegenerateImmersion as exc:
        raise GraphDegenerate(str(exc), t) from exc
    _check_graph(kin, t)
    vel, _ = graph_velocity(kin, t)
    dp = np.zeros_like(F.p)
    dp[2:] = vel
    return dp, kin


def _finite(state_arrays, t):
    for arr in state_arrays:
        if not np.all(np.isfinite(arr)):
            raise BlowUp("non-finite state", t)


def mcf_graph_step(s, dt):
    """One RK4 step of the graph-gauge mean curvature flow in the frozen ambient."""
    F, a = s.surface, s.ambient
    k1, _ = _surface_rhs(F, a, s.t)
    k2, _ = _surface_rhs(F.with_p(F.p + 0.5 * dt * k1), a, s.t)
    k3, _ = _surface_rhs(F.with_p(F.p + 0.5 * dt * k2), a, s.t)
    k4, _ = _surface_rhs(F.with_p(F.p + dt * k3), a, s.t)
    p = F.p + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    _finite([p], s.t + dt)
    return F.with_p(p)


def normal_motion_step(s, dt):
    """RK4 step of ``dF/dt = H`` without the graph gauge (torus grids only).

    Used to compare against the graph gauge before reparametrization effects
    accumulate; the ``M1`` components of ``F`` move as well.
    """
    if s.surface.grid.is_sphere:
        raise ValueError("normal motion comparison is only available on torus grids")
    F, a = s.surface, s.ambient

    def rhs(G):
        return kinematics(G, a).Hvec

    k1 = rhs(F)
    k2 = rhs(F.with_p(F.p + 0.5 * dt * k1))
    k3 = rhs(F.with_p(F.p + 0.5 * dt * k2))
    k4 = rhs(F.with_p(F.p + dt * k3))
    return F.with_p(F.p + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


def _joint_rhs(u1, u2, p, s):
    a = s.ambient.replace(s.ambient.m1.with_u(u1), s.ambient.m2.with_u(u2))
    F = s.surface.with_p(p)
    dp, kin = _surface_rhs(F, a, s.t)
    return ricci_rhs(a.m1), ricci_rhs(a.m2), dp, kin


def coupled_step(s, dt, info=None):
    """One RK4 step of the joint (ambient, surface) vector field.

    ``info``, if a dict, receives ``A2max`` and ``L1H`` (the integral of
    ``|H|``) of the state at the start of the step.
    """
    u1, u2, p = s.ambient.m1.u, s.ambient.m2.u, s.surface.p
    a1, b1, c1, kin = _joint_rhs(u1, u2, p, s)
    if info is not None:
        info["A2max"] = float(np.max(kin.A2))
        H = kin.Hvec
        info["L1H"] = kin.integrate(np.sqrt(kin.amb.inner(H, H)))
    a2, b2, c2, _ = _joint_rhs(u1 + 0.5 * dt * a1, u2 + 0.5 * dt * b1, p + 0.5 * dt * c1, s)
    a3, b3, c3, _ = _joint_rhs(u1 + 0.5 * dt * a2, u2 + 0.5 * dt * b2, p + 0.5 * dt * c2, s)
    a4, b4, c4, _ = _joint_rhs(u1 + dt * a3, u2 + dt * b3, p + dt * c3, s)
    nu1 = u1 + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    nu2 = u2 + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
    np_ = p + dt / 6.0 * (c1 + 2 * c2 + 2 * c3 + c4)
    _finite([nu1, nu2, np_], s.t + dt)
    amb = s.ambient.replace(s.ambient.m1.with_u(nu1), s.ambient.m2.with_u(nu2))
    return FlowState(s.t + dt, amb, s.surface.with_p(np_))


def surface_stable_dt(s, safety=0.2, kin=None):
    """``safety * h^2 * lambda_min(g) / (1 + max|A|^2)`` for the graph flow."""
    kin = kin or kinematics(s.surface, s.ambient)
    g = kin.g
    if s.surface.grid.is_sphere:
        lam = g[0, 0]
    else:
        tr = g[0, 0] + g[1, 1]
        det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
        lam = 0.5 * tr - np.sqrt(np.maximum(0.25 * tr ** 2 - det, 0.0))
    h = s.surface.grid.h
    return safety * h ** 2 * float(np.min(lam)) / (1.0 + float(np.max(kin.A2)))


def stable_dt(s, safety=0.2):
    """Minimum of the Ricci-flow bounds of both factors and the surface bound."""
    return min(ricci_stable_dt(s.ambient.m1, safety), ricci_stable_dt(s.ambient.m2, safety),
               surface_stable_dt(s, safety))


# ----------------------------------------------------------------------
# scenarios and trajectories


@dataclass(eq=False)
class Scenario:
    """Initial data plus run controls.

    ``samples`` diagnostic rows are recorded at equally spaced times from
    ``0`` to ``T`` (both included).
    ``dt_factor`` multiplies the stability safety factor (values above 1
    deliberately break the step bound; used to drive runs to termination).
    """

    name: str
    initial: FlowState
    T: float
    samples: int = 20
    dt_factor: float = 1.0
    dt_max: float = None
    probe: object = None
    snapshots: int = 0
    keep_states: bool = False

    @property
    def grid_size(self):
        return self.initial.surface.grid.n_x

    @property
    def initial_min_v(self):
        v, _, _ = graph_gauges(self.initial.surface, self.initial.ambient)
        return float(np.min(v))

    @property
    def admissible(self):
        """Graph-theorem hypothesis ``v(., 0) > sqrt(2)/2``."""
        return self.initial_min_v > math.sqrt(2) / 2


SERIES = ("min_cos_alpha", "min_v", "min_u1", "min_u2", "max_A2", "area",
          "int_one_minus_cos", "int_H2", "L1_H_cum")
EXTRA_SERIES = ("max_abs_cos_alpha", "max_sin2_half", "max_one_minus_u1", "max_one_minus_u2",
                "int_Rtilde", "int_ric_form", "int_cos", "L1H", "min_nablaJ_margin")


@dataclass(eq=False)
class FlowTrajectory:
    """Sampled diagnostics of one run.

    ``series`` holds the columns written to ``series.csv``; ``extra`` holds
    the further scalars used by the balance and decay analyses.
    """

    name: str
    r: float = 0.0
    times: list = field(default_factory=list)
    series: dict = field(default_factory=lambda: {k: [] for k in SERIES})
    extra: dict = field(default_factory=lambda: {k: [] for k in EXTRA_SERIES})
    phi: list = field(default_factory=list)
    phi_weight: str = ""
    states: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    step_times: list = field(default_factory=list)
    step_A2: list = field(default_factory=list)
    cause: str = "running"
    message: str = ""
    final_time: float = 0.0

    def column(self, key):
        if key in self.series:
            return np.asarray(self.series[key], dtype=float)
        if key in self.extra:
            return np.asarray(self.extra[key], dtype=float)
        return np.asarray(getattr(self, key), dtype=float)

    @property
    def completed(self):
        return self.cause == "completed"


def state_diagnostics(s):
    """Scalar diagnostics of a state (the per-sample row of a trajectory)."""
    from .diagnostics import r_tilde, ricci_form_pairing

    F, a = s.surface, s.ambient
    kin = kinematics(F, a, curvature=True)
    frame = adapted_frame(F, a, kin=kin)
    v, u1, u2 = graph_gauges(F, a, kin)
    H = kin.Hvec
    H2 = kin.amb.inner(H, H)
    return {
        "min_cos_alpha": float(np.min(frame.cos_alpha)),
        "max_abs_cos_alpha": float(np.max(np.abs(frame.cos_alpha))),
        "min_v": float(np.min(v)),
        "min_u1": float(np.min(u1)),
        "min_u2": float(np.min(u2)),
        "max_A2": float(np.max(kin.A2)),
        "area": kin.integrate(np.ones_like(v)),
        "int_one_minus_cos": kin.integrate(1.0 - frame.cos_alpha),
        "int_H2": kin.integrate(H2),
        "L1H": kin.integrate(np.sqrt(H2)),
        "max_sin2_half": float(np.max(0.5 * (1.0 - frame.cos_alpha))),
        "max_one_minus_u1": float(np.max(1.0 - u1)),
        "max_one_minus_u2": float(np.max(1.0 - u2)),
        "int_Rtilde": kin.integrate(r_tilde(kin)),
        "int_ric_form": kin.integrate(ricci_form_pairing(frame)),
        "int_cos": kin.integrate(frame.cos_alpha),
        "min_nablaJ_margin": float(np.min(nabla_J_sq(frame) - 0.5 * frame.H2)),
    }


def snapshot_fields(s):
    frame = adapted_frame(s.surface, s.ambient)
    v, u1, u2 = graph_gauges(s.surface, s.ambient, frame.kin)
    return {"f1": s.surface.p[2], "f2": s.surface.p[3], "u_M1": s.ambient.m1.u,
            "cos_alpha": frame.cos_alpha, "A2": frame.kin.A2, "v": v}


def run(sc, progress=None):
    """Integrate a scenario to ``sc.T`` (or termination) recording diagnostics."""
    from .diagnostics import phi_value

    traj = FlowTrajectory(sc.name, sc.initial.ambient.r)
    if sc.probe is not None:
        traj.phi_weight = sc.probe.weight
    s = sc.initial
    h = s.surface.grid.h
    threshold = BLOWUP_FACTOR / h ** 2
    if sc.samples < 2:
        raise ValueError("a run records at least two samples (t = 0 and t = T)")
    intervals = sc.samples - 1
    interval = sc.T / intervals
    # snapshots at evenly spaced sample indices, first and last included
    snap_at = set()
    if sc.snapshots == 1:
        snap_at = {0}
    elif sc.snapshots > 1:
        snap_at = {int(j * intervals / (sc.snapshots - 1) + 0.5) for j in range(sc.snapshots)}
    # running int_0^t int |H| dmu ds, trapezoid rule over the time steps
    cum = 0.0
    last = None         # (t, int |H| dmu) at the latest visited state

    def accumulate(t, L1):
        nonlocal cum, last
        if last is not None and t > last[0]:
            cum += 0.5 * (t - last[0]) * (last[1] + L1)
        last = (t, L1)

    def record(state, k):
        d = state_diagnostics(state)
        accumulate(state.t, d["L1H"])
        traj.times.append(state.t)
        for key in SERIES[:-1]:
            traj.series[key].append(d[key])
        for key in EXTRA_SERIES:
            traj.extra[key].append(d[key])
        traj.series["L1_H_cum"].append(cum)
        if sc.probe is not None:
            traj.phi.append(phi_value(state, sc.probe) if state.t < sc.probe.t0 else float("nan"))
        if sc.keep_states:
            traj.states.append(state)
        if k in snap_at:
            traj.snapshots.append((state.t, snapshot_fields(state)))
        traj.final_time = state.t

    try:
        record(s, 0)
        for k in range(1, intervals + 1):
            target = k * interval
            span = target - s.t
            dt_bound = stable_dt(s) * sc.dt_factor
            if sc.dt_max is not None:
                dt_bound = min(dt_bound, sc.dt_max)
            nsteps = max(1, math.ceil(span / dt_bound - 1e-9))
            dt = span / nsteps
            for _ in range(nsteps):
                info = {}
                s_next = coupled_step(s, dt, info)
                accumulate(s.t, info["L1H"])
                traj.step_times.append(s.t)
                traj.step_A2.append(info["A2max"])
                if info["A2max"] > threshold:
                    raise BlowUp("max|A|^2 exceeded the resolvable threshold", s.t)
                s = s_next
            s = replace(s, t=target) if abs(s.t - target) < 1e-12 * max(1.0, target) else s
            record(s, k)
            if progress:
                progress(s.t)
        traj.cause = "completed"
    except (BlowUp, GraphDegenerate) as exc:
        traj.cause = "blowup" if isinstance(exc, BlowUp) else "graph_degenerate"
        traj.message = str(exc)
        # time of the last state reached before termination
        traj.final_time = exc.t if exc.t is not None else s.t
    return traj


def run_states(state, dt, nsteps):
    """States ``state, ..., state + nsteps*dt`` from repeated coupled steps."""
    out = [state]
    for _ in range(nsteps):
        out.append(coupled_step(out[-1], dt))
    return out


def ricci_only_step(s, dt):
    """Advance only the ambient (the surface parametrization is kept)."""
    return FlowState(s.t + dt, kahler_ricci_step(s.ambient, dt, s.t), s.surface)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from krmcf.cli_io import build_scenario
from krmcf.diagnostics import (MonotonicityProbe, ResidualReport, area_balance, fit_decay_rate,
                               fit_monotonicity_constants, inequality_suite, observed_order,
                               phi_value, residual_suite, singularity_tracker, smooth_cutoff,
                               symplectic_balance, with_orders)
from krmcf.errors import NoBlowUp
from krmcf.flow import FlowState, FlowTrajectory, run
from krmcf.immersion import graph_gauges, nabla_J_sq_components

from helpers import linear_state, twisted_config, twisted_state

DIAG = ((1, 0), (0, 1))


# convergence bookkeeping ----------------------------------------------------------

def test_observed_order():
    assert observed_order(4e-2, 1e-2) == pytest.approx(2.0)
    assert observed_order(8.0, 1.0, ratio=8.0) == pytest.approx(1.0)
    assert observed_order(1.0, 0.0) == math.inf
    assert math.isnan(observed_order(0.0, 0.0))


def test_with_orders_fills_consecutive_pairs():
    reps = [ResidualReport("x", n, 0.0, e, e) for n, e in ((16, 1.6e-1), (32, 4e-2), (64, 1e-2))]
    with_orders(reps)
    assert reps[0].order is None
    assert reps[1].order == pytest.approx(2.0) and reps[2].order == pytest.approx(2.0)


def test_residual_report_rejects_negative_norms():
    with pytest.raises(ValueError):
        ResidualReport("x", 16, 0.0, -1.0, 0.0)


# residuals -----------------------------------------------------------------------

def test_residuals_vanish_on_stationary_diagonal():
    for rep in residual_suite(linear_state(16, DIAG)):
        assert rep.linf < 1e-10, rep.name


def test_residuals_converge_on_twisted_graph():
    coarse = {r.name: r for r in residual_suite(twisted_state(16))}
    fine = {r.name: r for r in residual_suite(twisted_state(32))}
    for name in ("cos_alpha", "area_element", "metric", "u1", "u2"):
        assert observed_order(coarse[name].linf, fine[name].linf) > 1.5, name
    assert observed_order(coarse["A2"].linf, fine["A2"].linf) > 1.0


# inequalities ---------------------------------------------------------------------

h_arrays = arrays(np.float64, (2, 2, 2), elements=st.floats(-10, 10))


@given(h_arrays)
def test_nabla_J_dominates_half_mean_curvature(h):
    h = 0.5 * (h + np.swapaxes(h, 1, 2))
    H = h[:, 0, 0] + h[:, 1, 1]
    assert nabla_J_sq_components(h) - 0.5 * np.sum(H ** 2) >= -1e-12 * (1 + np.sum(h ** 2))


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(1, 2))
def test_factor_pairings_bounded(a, b, k):
    s = linear_state(16, DIAG)
    x, y = s.surface.grid.coords()
    F = s.surface.with_p(np.stack([0 * x, 0 * x, a * np.sin(k * y), b * np.cos(x)]))
    v, u1, _ = graph_gauges(F, s.ambient)
    w = u1 - v
    assert np.all(v * v + w * w <= 1 + 1e-12)


def test_inequality_suite_on_twisted_graph():
    verdicts = inequality_suite(twisted_state(32))
    assert set(verdicts) == {"nablaJ_vs_H", "grad_angle", "pairings", "gauge_lower_bound"}
    assert all(v.holds for v in verdicts.values())
    # v <= 1/2 + O(f) on a diagonal-type graph, so the gauge bound has no support
    assert verdicts["gauge_lower_bound"].masked_fraction == 1.0
    assert verdicts["nablaJ_vs_H"].worst_margin >= -1e-12


# monotonicity -------------------------------------------------------------------------

def test_smooth_cutoff_profile():
    d = np.linspace(0, 3, 301)
    c = smooth_cutoff(d, 1.0)
    assert np.all(c[d <= 1] == 1.0) and np.all(c[d >= 2] == 0.0)
    assert np.all(np.diff(c) <= 0)
    assert smooth_cutoff(np.array(1.5), 1.0) == pytest.approx(0.5)


def test_probe_validation():
    with pytest.raises(ValueError):
        MonotonicityProbe(np.zeros(4), 1.0, 0.5, weight="bogus")
    with pytest.raises(ValueError):
        MonotonicityProbe(np.zeros(4), 1.0, 0.0)
    probe = MonotonicityProbe(np.zeros(4), 1.0, 3.0)
    with pytest.raises(ValueError):
        probe.validate(linear_state(16, DIAG).ambient)


def test_gaussian_density_of_a_plane_is_one():
    s = linear_state(128, DIAG)
    probe = MonotonicityProbe.at_max_curvature(s, t0=0.02)
    values = [phi_value(FlowState(t, s.ambient, s.surface), probe) for t in (0.0, 0.005, 0.01, 0.015)]
    np.testing.assert_allclose(values, 1.0, atol=1e-8)
    with pytest.raises(ValueError):
        phi_value(FlowState(0.02, s.ambient, s.surface), probe)


def test_fit_monotonicity_constants():
    t = np.linspace(0, 0.9, 10)
    assert fit_monotonicity_constants(t, 2 - t, 1.0) == (0.0, 0.0)
    c1, _ = fit_monotonicity_constants(t, np.exp(-0.7 * np.sqrt(1.0 - t)), 1.0)
    assert c1 == pytest.approx(0.7, rel=1e-10)
    _, c2 = fit_monotonicity_constants(t, 0.3 * t, 1.0)
    assert c2 == pytest.approx(0.3, rel=1e-10)


# balances, decay and termination -------------------------------------------------------

@pytest.fixture(scope="module")
def short_run():
    cfg = twisted_config(32, T=0.5, samples=11)
    cfg.u1 = cfg.u2 = "0"
    return run(build_scenario(cfg))


def test_area_and_symplectic_balances(short_run):
    # spatial truncation dominates at 32^2 (second order; ~8e-4 at 64^2)
    area = area_balance(short_run)
    assert area.integrated_residual < 5e-3 and area.max_residual < 2e-2
    sym = symplectic_balance(short_run)
    assert sym.integrated_residual < 5e-3
    # flat factors: the Kahler forms are parallel and both right-hand sides agree
    assert sym.extra["as_stated_integrated"] == pytest.approx(sym.integrated_residual, abs=1e-6)
    assert np.all(np.diff(sym.extra["L1_H_cum"]) > 0)


def test_area_balance_window(short_run):
    part = area_balance(short_run, t_end=0.2)
    np.testing.assert_allclose(part.times, [0.0, 0.05, 0.1, 0.15, 0.2], atol=1e-12)
    assert part.rhs.shape == part.times.shape and part.integrated_residual < 5e-3


def test_fit_decay_rate():
    t = np.linspace(0, 4, 41)
    assert fit_decay_rate(t, 3 * np.exp(-2 * t)) == pytest.approx(2.0)
    assert fit_decay_rate(t, np.exp(-t) + (t < 1), t_min=1.0) == pytest.approx(1.0)
    assert math.isnan(fit_decay_rate(t, np.zeros_like(t)))


def synthetic_blowup(c, T=1.0, n=400):
    tr = FlowTrajectory("synthetic")
    tr.step_times = list(np.linspace(0, 0.99 * T, n))
    tr.step_A2 = list(c / (T - np.asarray(tr.step_times)))
    tr.cause = "blowup"
    return tr


def test_singularity_tracker_on_synthetic_rates(short_run):
    with pytest.raises(NoBlowUp):
        singularity_tracker(short_run)
    rep = singularity_tracker(synthetic_blowup(0.5))
    assert rep.T_est == pytest.approx(1.0, abs=1e-9)
    assert rep.lower_bound_ok and rep.tail_monotone
    assert rep.label.startswith("type I")
    assert rep.sup_scaled == pytest.approx(0.5, rel=1e-6)
    assert not singularity_tracker(synthetic_blowup(0.1)).lower_bound_ok


def test_singularity_report_for_forced_termination():
    from helpers import shipped
    traj = run(shipped("near-degenerate"))
    rep = singularity_tracker(traj)
    assert rep.cause == "blowup"
    assert rep.tail_monotone and rep.lower_bound_ok
    assert rep.T_est >= traj.step_times[-1]

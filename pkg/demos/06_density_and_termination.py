"""Gaussian density along a run, and how a run ends.

Part 1 evaluates the angle-weighted Gaussian density ``Phi(t)`` of a graph
in flat ``T^2 x T^2``; it does not increase.  Part 2 drives a steep graph
with an oversized time step: the run stops when ``max |A|^2`` passes the
resolvable threshold, and the termination report fits the blow-up time and
checks the ``(T - t) max|A|^2`` lower bound on the final window.
"""

from krmcf.cli_io import build_scenario, load_config
from krmcf.diagnostics import phi_functional, singularity_tracker
from krmcf.flow import run

cfg = load_config("perturbed-graph-flat")
sc = build_scenario(cfg, grid_size=32)
rep = phi_functional(run(sc), sc.probe)
print(f"Gaussian density ({sc.probe.weight} weight, t0 = {sc.probe.t0}) at 32^2")
for t, phi in zip(rep.times[::3], rep.phi[::3]):
    print(f"  t = {t:.2f}  Phi = {phi:.8f}")
print(f"  largest change between samples {rep.max_increase:+.1e} (negative: strictly decreasing)")

sc = build_scenario(load_config("near-degenerate"))
traj = run(sc)
print(f"\nnear-degenerate: {traj.cause} at t = {traj.final_time:.3f}")
print(f"  {traj.message}")
s = singularity_tracker(traj)
print(f"  fitted T = {s.T_est:.3f} +- {s.T_uncertainty:.3f}, max (T - t) U = {s.sup_scaled:.3f}")
print(f"  lower bound holds: {s.lower_bound_ok}, monotone tail: {s.tail_monotone}, label: {s.label}")

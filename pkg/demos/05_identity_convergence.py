"""Refinement study of the evolution identities.

Each identity (Kahler angle, area element, induced metric, ``|A|^2``, the
gauges ``u1``, ``u2``) is checked by comparing a centered time difference
along the discrete coupled flow with the right-hand side evaluated on the
grid.  The pointwise residual shrinks at second order under refinement.
"""

from krmcf.cli_io import initial_state, load_config
from krmcf.diagnostics import residual_suite, with_orders

cfg = load_config("perturbed-graph-torus")
by_grid = {n: residual_suite(initial_state(cfg, n)) for n in (16, 32, 64)}

names = [r.name for r in by_grid[16]]
print(f"{'identity':>14} " + " ".join(f"{n:>10}" for n in by_grid) + "   orders")
for i, name in enumerate(names):
    reports = with_orders([by_grid[n][i] for n in by_grid])
    orders = " ".join(f"{r.order:.2f}" for r in reports[1:])
    print(f"{name:>14} " + " ".join(f"{r.linf:10.2e}" for r in reports) + f"   {orders}")

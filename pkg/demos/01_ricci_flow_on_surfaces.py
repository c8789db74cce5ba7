"""Ricci flow of conformal metrics on a torus and a sphere.

A conformal metric ``exp(2u) g_base`` evolves by ``u_t = -(R - r)/4``.  On a
torus (``r = 0``) a bumpy factor relaxes to the flat metric; on a sphere
(``r = 2``) it relaxes to the round one.  The area stays fixed and the total
curvature stays ``4 pi chi`` (Gauss-Bonnet) throughout.
"""

import numpy as np

from krmcf.base_geometry import (ConformalSurfaceMetric, gauss_bonnet_defect, normalize_area,
                                 ricci_flow_step, ricci_stable_dt, total_area)


def evolve(m, T):
    t = 0.0
    while t < T - 1e-14:
        dt = min(ricci_stable_dt(m), T - t)
        m = ricci_flow_step(m, dt)
        t += dt
    return m


def report(label, m):
    spread = float(np.ptp(m.R))
    print(f"  {label:>6}: area {total_area(m):.10f}  oscillation of R {spread:.3e}  "
          f"Gauss-Bonnet defect {gauss_bonnet_defect(m):.1e}")


print("bumpy flat torus, u = 0.2 sin(x) cos(y), 32 x 32")
g = ConformalSurfaceMetric.flat(32)
x, y = g.grid.coords()
m = g.with_u(0.2 * np.sin(x) * np.cos(y))
report("t = 0", m)
for T in (0.5, 2.0):
    report(f"t = {T}", evolve(m, T))

print("bumpy sphere, u = 0.2 cos(theta)^2 (area normalized), 64 cells")
s = ConformalSurfaceMetric.round(64)
theta = s.grid.coords()[0]
m = normalize_area(s.with_u(0.2 * np.cos(theta) ** 2))
report("t = 0", m)
for T in (0.5, 2.0):
    report(f"t = {T}", evolve(m, T))

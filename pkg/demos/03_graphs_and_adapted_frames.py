"""Graph immersions, the Kahler angle and the adapted frame.

A graph ``x -> (x, f(x))`` of ``T^2`` into ``T^2 x T^2`` is built, its
induced metric, mean curvature and Kahler angle are computed, and the
adapted orthonormal frame is checked to put the Kahler form into its
canonical shape.  The graph gauges ``v``, ``u1 = v + w``, ``u2 = v - w`` are
the pairings of the tangent plane with the factor Kahler forms.
"""

import numpy as np

from krmcf.ambient import ProductKahlerAmbient
from krmcf.base_geometry import ConformalSurfaceMetric
from krmcf.immersion import (GraphImmersion, adapted_frame, graph_gauges, kahler_angle,
                             mean_curvature_vector, nabla_J_sq, second_fundamental_form)

n = 64
m1 = ConformalSurfaceMetric.flat(n)
x, y = m1.grid.coords()
amb = ProductKahlerAmbient(m1.with_u(0.15 * np.sin(x) * np.cos(y)), ConformalSurfaceMetric.flat(n))

for label, winding in (("winding diag(1, 1) (symplectic)", ((1, 0), (0, 1))),
                       ("winding diag(1, -1) (near Lagrangian)", ((1, 0), (0, -1)))):
    F = GraphImmersion.graph(m1.grid, np.stack([0.3 * np.sin(y), 0.3 * np.cos(x)]), winding)
    cos_a = kahler_angle(F, amb)
    v, u1, u2 = graph_gauges(F, amb)
    H = mean_curvature_vector(F, amb)
    print(label)
    print(f"  cos(alpha) in [{cos_a.min():+.4f}, {cos_a.max():+.4f}]")
    print(f"  min v {v.min():.4f}, min u1 {u1.min():.4f}, min u2 {u2.min():.4f}")
    print(f"  max |H| (coordinate norm) {np.sqrt((H ** 2).sum(axis=0)).max():.4f}")

    fr = adapted_frame(F, amb)
    fr = second_fundamental_form(F, amb, fr)
    print(f"  degenerate (complex) points: {int(fr.degenerate.sum())}")
    print(f"  max |A|^2 {fr.A2.max():.4f}, max |H|^2 {fr.H2.max():.4f}")
    margin = nabla_J_sq(fr) - 0.5 * fr.H2
    print(f"  min(|nabla J|^2 - |H|^2 / 2) = {margin.min():.3e} (never negative)")

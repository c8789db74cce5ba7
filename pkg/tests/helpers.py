"""Small scenario builders shared by the tests."""

import numpy as np

from krmcf.ambient import ProductKahlerAmbient
from krmcf.base_geometry import ConformalSurfaceMetric
from krmcf.cli_io import build_scenario, load_config, parse_config
from krmcf.flow import FlowState
from krmcf.immersion import GraphImmersion

TWISTED = """
base = flat
r = 0
grid = {n}
T = {T}
u1 = 0.15*sin(x)*cos(y)
u2 = 0.1*cos(x + y)
f1 = 0.3*sin(y)
f2 = 0.3*cos(x)
winding = 1 0 0 1
samples = {samples}
"""


def twisted_config(n=32, T=0.05, samples=2, **extra):
    text = TWISTED.format(n=n, T=T, samples=samples)
    text += "".join(f"{k} = {v}\n" for k, v in extra.items())
    return parse_config(text)


def twisted_state(n=32):
    return build_scenario(twisted_config(n)).initial


def shipped(name, grid_size=None, keep_states=False, **override):
    cfg = load_config(name)
    for k, v in override.items():
        setattr(cfg, k, v)
    return build_scenario(cfg, grid_size=grid_size, keep_states=keep_states)


def linear_state(n, winding, base="flat"):
    if base == "flat":
        a = ProductKahlerAmbient(ConformalSurfaceMetric.flat(n), ConformalSurfaceMetric.flat(n))
    else:
        a = ProductKahlerAmbient(ConformalSurfaceMetric.round(n), ConformalSurfaceMetric.round(n))
    grid = a.m1.grid
    F = GraphImmersion.graph(grid, np.zeros((2,) + grid.shape), winding)
    return FlowState(0.0, a, F)

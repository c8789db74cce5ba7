"""Numerical lab for the coupled Kahler-Ricci / mean curvature flow on products
of Riemann surfaces."""

from .grid import PeriodicGrid
from .base_geometry import ConformalSurfaceMetric
from .ambient import ProductKahlerAmbient
from .immersion import GraphImmersion, adapted_frame, kinematics
from .flow import FlowState, Scenario, coupled_step, run, stable_dt

__all__ = ["PeriodicGrid", "ConformalSurfaceMetric", "ProductKahlerAmbient", "GraphImmersion",
           "adapted_frame", "kinematics", "FlowState", "Scenario", "coupled_step", "run",
           "stable_dt"]
__version__ = "0.1.0"

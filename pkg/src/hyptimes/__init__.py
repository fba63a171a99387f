"""Hyperbolic times, Pliss times and the linear Poincare flow as tools for
locating sinks and sources of maps and flows from finite orbits."""

__version__ = "0.1.0"

from .flow import SmoothSystem, integrate, iterate
from .classify import ClassificationReport, ClassifyConfig, classify_trajectory
from .lpf import lpf_cocycle, sectional_exponents
from .pliss import flow_pliss_set, pliss_times, reverse_pliss_times
from .systems import builtin, from_config, load_system

__all__ = [
    "SmoothSystem", "integrate", "iterate",
    "ClassificationReport", "ClassifyConfig", "classify_trajectory",
    "lpf_cocycle", "sectional_exponents",
    "flow_pliss_set", "pliss_times", "reverse_pliss_times",
    "builtin", "from_config", "load_system",
]

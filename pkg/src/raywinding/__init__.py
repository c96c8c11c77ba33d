"""Homological winding statistics of boundary-typical geodesic rays.

Exact free-group and Schottky-disk geometry, a reproducible Monte Carlo
walk engine, drift/covariance estimators, and a statistical harness that
turns the limit laws (LLN, CLT, LIL, large deviations, gambler's ruin)
into pass/fail checks at explicit tolerances.
"""

__version__ = "0.1.0"

from .freegroup import IDENTITY, Projection, Word, abelianize, invert, multiply, stable_length
from .measures import StepMeasure, example_anu_measure, point_mass, srw_measure, validate_measure
from .treeboundary import (
    BoundaryWord,
    busemann_cocycle,
    gromov_product,
    horofunction,
    periodic_boundary,
    ray_point,
    tracking_distance,
)
from .walks import StoppingSpec, WalkPlan, batch_run, limit_boundary_point, sample_path

__all__ = [
    "IDENTITY",
    "Projection",
    "Word",
    "abelianize",
    "invert",
    "multiply",
    "stable_length",
    "StepMeasure",
    "example_anu_measure",
    "point_mass",
    "srw_measure",
    "validate_measure",
    "BoundaryWord",
    "busemann_cocycle",
    "gromov_product",
    "horofunction",
    "periodic_boundary",
    "ray_point",
    "tracking_distance",
    "StoppingSpec",
    "WalkPlan",
    "batch_run",
    "limit_boundary_point",
    "sample_path",
]

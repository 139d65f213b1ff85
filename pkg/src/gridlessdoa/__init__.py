"""Gridless multidimensional frequency (angle-of-arrival) estimation on
arbitrary 3D antenna arrays: multilevel-Toeplitz Vandermonde decomposition,
convex and rank-sweep recovery programs, and a seeded Monte Carlo harness.
"""

from . import cli, errors, evalkit, geometry, mlt, solvers, vandermonde
from .geometry import (
    ArrayDeployment,
    EmbeddedUniformReport,
    FrequencySet,
    SensingMatrix,
)
from .mlt import MLTMatrix
from .solvers import SdpSolution, SolverParams
from .vandermonde import Decomposition

__all__ = [
    "cli",
    "errors",
    "evalkit",
    "geometry",
    "mlt",
    "solvers",
    "vandermonde",
    "ArrayDeployment",
    "EmbeddedUniformReport",
    "FrequencySet",
    "SensingMatrix",
    "MLTMatrix",
    "SdpSolution",
    "SolverParams",
    "Decomposition",
]

__version__ = "0.1.0"

"""Shrinking projection solver for split equilibrium and fixed-point problems."""

from .convex import (
    AffineSubspace,
    Ball,
    Box,
    HalfSpace,
    HalfSpaceIntersection,
    InfeasibleSetError,
    WholeSpace,
    project,
    project_intersection,
)
from .equilibrium import ConvexDifference, MonotoneAffine, ZeroBifunction, resolvent
from .mapping import AffineMap, MappingSpec, NegationMap, ProjectionMap, Schedule, XiFunction
from .solver import ProblemInstance, RunResult, SolverConfig, run, validate_config

__version__ = "0.1.0"

__all__ = [
    "AffineMap",
    "AffineSubspace",
    "Ball",
    "Box",
    "ConvexDifference",
    "HalfSpace",
    "HalfSpaceIntersection",
    "InfeasibleSetError",
    "MappingSpec",
    "MonotoneAffine",
    "NegationMap",
    "ProblemInstance",
    "ProjectionMap",
    "RunResult",
    "Schedule",
    "SolverConfig",
    "WholeSpace",
    "XiFunction",
    "ZeroBifunction",
    "project",
    "project_intersection",
    "resolvent",
    "run",
    "validate_config",
]

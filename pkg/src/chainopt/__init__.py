"""Simulation-driven optimization of blockchain network parameters."""

from .params import (
    ArgumentVector,
    Candidate,
    ConfigError,
    Constraint,
    Direction,
    ObjectiveSet,
    ObjectiveSpec,
    ParameterSpace,
    ParameterSpec,
    SimResult,
    assemble_arguments,
    scalarize,
)

__version__ = "0.1.0"

__all__ = [
    "ArgumentVector",
    "Candidate",
    "ConfigError",
    "Constraint",
    "Direction",
    "ObjectiveSet",
    "ObjectiveSpec",
    "ParameterSpace",
    "ParameterSpec",
    "SimResult",
    "assemble_arguments",
    "scalarize",
]

"""Spectral simulation and verification tools for quasilinear stochastic
convection-diffusion equations on the periodic torus."""

from .torus import TorusGrid, ScalarField, SpectralField, MatrixField
from .coefficients import CoefficientSet, builtin, validate
from .semigroup import HeatSemigroup
from .noise import NoisePath, generate
from .solver import SolverConfig, Trajectory, integrate, integrate_batch

__version__ = "0.1.0"

__all__ = [
    "TorusGrid", "ScalarField", "SpectralField", "MatrixField",
    "CoefficientSet", "builtin", "validate", "HeatSemigroup",
    "NoisePath", "generate", "SolverConfig", "Trajectory",
    "integrate", "integrate_batch",
]

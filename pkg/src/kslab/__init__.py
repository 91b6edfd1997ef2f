"""Numerical laboratory for the degenerate parabolic-parabolic Keller-Segel
system with diffusion exponent 2n/(n+2) < m < 2 - 2/n on a periodic box."""

from .constants import ModelParams, ParameterError, thresholds
from .criterion import CriterionVerdict, classify, free_energy, free_energy_regularized, track
from .dynamics import SolverConfig, SimState, initial_data, run, step
from .field import GridSpec, Mollifier, ScalarField

__all__ = [
    "CriterionVerdict",
    "GridSpec",
    "ModelParams",
    "Mollifier",
    "ParameterError",
    "ScalarField",
    "SimState",
    "SolverConfig",
    "classify",
    "free_energy",
    "free_energy_regularized",
    "initial_data",
    "run",
    "step",
    "thresholds",
    "track",
]

__version__ = "0.1.0"

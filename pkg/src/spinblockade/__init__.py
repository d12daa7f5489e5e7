"""Simulation and analysis of single-shot spin-blockade spectroscopy."""

from .core_model import ModelParams, branch_current, energy_gap, ground_p20
from .errors import ComputationError, DataIOError, DegenerateFitError, SpinBlockadeError, ValidationError
from .fitting import FitConfig, FitResult, fit, profile_midpoints
from .simulator import Histogram2D, RelaxationSpec, ShotMatrix, SweepSpec, histogram, simulate_shots

__version__ = "0.1.0"

__all__ = [
    "ComputationError",
    "DataIOError",
    "DegenerateFitError",
    "FitConfig",
    "FitResult",
    "Histogram2D",
    "ModelParams",
    "RelaxationSpec",
    "ShotMatrix",
    "SpinBlockadeError",
    "SweepSpec",
    "ValidationError",
    "branch_current",
    "energy_gap",
    "fit",
    "ground_p20",
    "histogram",
    "profile_midpoints",
    "simulate_shots",
]

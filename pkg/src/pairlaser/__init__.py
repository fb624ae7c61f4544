"""Quantum and mean-field simulation of a three-mode cavity pair laser."""

__version__ = "0.1.0"

from .fockspace import DensityMatrix, FockBasis, SparseOperator, StateVector
from .model import LindbladModel, ModelParams, build_liouvillian, build_liouvillian_block, build_model
from .observables import (
    g2_tau,
    intensity_difference_spectrum,
    mandel_q,
    occupations_and_intensities,
    truncation_convergence_check,
)
from .semiclassical import integrate_meanfield, locate_bifurcation, steady_branch, threshold
from .steadystate import BlockSolver, solve_long_time, solve_null_space
from .trajectories import TrajectoryConfig, ensemble_average, run_ensemble, run_trajectory

__all__ = [
    "FockBasis", "SparseOperator", "StateVector", "DensityMatrix",
    "ModelParams", "LindbladModel", "build_model", "build_liouvillian", "build_liouvillian_block",
    "BlockSolver", "solve_null_space", "solve_long_time",
    "TrajectoryConfig", "run_trajectory", "run_ensemble", "ensemble_average",
    "threshold", "steady_branch", "integrate_meanfield", "locate_bifurcation",
    "occupations_and_intensities", "mandel_q", "g2_tau", "intensity_difference_spectrum",
    "truncation_convergence_check",
]

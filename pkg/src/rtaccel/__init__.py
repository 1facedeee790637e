"""Accelerated source iteration for anisotropic radiative transfer.

Even/odd-parity Galerkin discretization of the stationary transfer
equation, solved by preconditioned source iteration with residual
minimization over small diffusion-flavored correction subspaces.
"""

from .assembly import OpticalField, SourceSpec, hg_phase
from .benchmark import BenchmarkConfig, build_checkerboard, run_suite
from .geometry import (build_circle_mesh, build_octahedral_sphere_mesh,
                       build_rect_mesh, dump_mesh, load_mesh)
from .operators import BlockVector, InnerSolveError, TransportSystem, build_system
from .solver import ConvergenceHistory, IterationConfig, dense_oracle, run
from .subspace import CorrectionSolver, eigen_theta

__version__ = "0.1.0"

__all__ = [
    "OpticalField", "SourceSpec", "hg_phase",
    "BenchmarkConfig", "build_checkerboard", "run_suite",
    "build_circle_mesh", "build_octahedral_sphere_mesh", "build_rect_mesh",
    "dump_mesh", "load_mesh",
    "BlockVector", "InnerSolveError", "TransportSystem", "build_system",
    "ConvergenceHistory", "IterationConfig", "dense_oracle", "run",
    "CorrectionSolver", "eigen_theta",
    "__version__",
]

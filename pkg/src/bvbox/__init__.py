"""Smoothing and penalty continuation for BV-regularized problems with box constraints."""

from .grid_fem import Mesh, build_mesh, element_gradient, grad_l1, norms
from .problems import (Bounds, Denoising, LinearTracking, SemilinearTracking,
                       Linearized, SolverFailure, StateTriple, indicator_target,
                       linearized_objective, make_problem)
from .penalized import (PenalizedParams, assemble_F, assemble_G, eval_j,
                        residual_R_eps, residual_R_rho)
from .newton import NewtonConfig, NewtonReport, StagnationError, newton_solve
from .continuation import (ContinuationConfig, ContinuationRecord, compute_errors,
                           errors_against_final, run_continuation, run_linearized)

__version__ = "0.1.0"

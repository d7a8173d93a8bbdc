"""Adaptive FEM-BEM coupling for 2D (nonlinear) transmission problems.

P1 finite elements on the interior domain are coupled with piecewise
constant boundary elements through the Bielak-MacCamy, Johnson-Nedelec or
symmetric formulation. Residual error estimators drive Doerfler marking
and newest vertex bisection.
"""

from .adapt import AdaptiveConfig, RunLog, doerfler_mark, estimator_reduction_fit, run
from .bem import OperatorSet, Panels, assemble_operators
from .coupling import CoupledSolution, CoupledSystem, CouplingMethod, SolverConfig, SolverError, solve, solve_stabilized
from .estimate import EstimatorBreakdown, estimate
from .mesh import MarkSet, Mesh, build_initial, refine_nvb, refine_uniform
from .nonlinearity import CoefficientModel, make_anisotropic, make_benchmark_nonlinear, make_identity
from .problems import PROBLEM_NAMES, ProblemSpec, make_problem
from .rates import RateReport, fit_rate

__version__ = "0.1.0"

__all__ = [
    "AdaptiveConfig",
    "CoefficientModel",
    "CoupledSolution",
    "CoupledSystem",
    "CouplingMethod",
    "EstimatorBreakdown",
    "MarkSet",
    "Mesh",
    "OperatorSet",
    "PROBLEM_NAMES",
    "Panels",
    "ProblemSpec",
    "RateReport",
    "RunLog",
    "SolverConfig",
    "SolverError",
    "assemble_operators",
    "build_initial",
    "doerfler_mark",
    "estimate",
    "estimator_reduction_fit",
    "fit_rate",
    "make_anisotropic",
    "make_benchmark_nonlinear",
    "make_identity",
    "make_problem",
    "refine_nvb",
    "refine_uniform",
    "run",
    "solve",
    "solve_stabilized",
]

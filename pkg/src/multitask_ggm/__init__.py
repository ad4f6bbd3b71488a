"""Joint estimation of sparse Gaussian graphical models across related tasks.

Maximizes ``sum_k T_k (log det W_k - <S_k, W_k>) - rho * ||W||_{1,p}`` for
p in {2, inf} by block coordinate descent.
"""

from ._backend import DEFAULT as _DEFAULT_KERNEL
from .bcd import FitReport, SolverError, screen_blocks, solve
from .model import (EigenBounds, NormOrder, PrecisionSet, ProblemSpec,
                    TaskSuite, eigenvalue_bounds, gaussian_log_likelihood,
                    l1p_norm, multitask_objective, optimality_residual)

__version__ = "0.1.0"
KERNEL = _DEFAULT_KERNEL.name

__all__ = [
    "EigenBounds",
    "FitReport",
    "NormOrder",
    "PrecisionSet",
    "ProblemSpec",
    "SolverError",
    "TaskSuite",
    "eigenvalue_bounds",
    "gaussian_log_likelihood",
    "l1p_norm",
    "multitask_objective",
    "optimality_residual",
    "screen_blocks",
    "solve",
]

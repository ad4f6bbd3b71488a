"""Problem data, objective and analytic bounds for multi-task GGM learning.

Arrays are stored stacked: covariances and precisions have shape
``(n_tasks, n_features, n_features)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DefinitenessError",
    "DegenerateInputError",
    "NormOrder",
    "TaskSuite",
    "ProblemSpec",
    "PrecisionSet",
    "EigenBounds",
    "symmetrize",
    "spectral_norm",
    "gaussian_log_likelihood",
    "l1p_norm",
    "penalty",
    "multitask_objective",
    "eigenvalue_bounds",
    "optimality_residual",
]


class DefinitenessError(ValueError):
    """A matrix that must be positive (semi)definite is not."""


class DegenerateInputError(ValueError):
    """Input data cannot define a well-posed problem (e.g. zero variance)."""


class NormOrder(enum.Enum):
    """Inner norm of the mixed l1,p regularizer."""

    P2 = "2"
    PINF = "inf"

    @property
    def dual(self) -> float:
        """Exponent of the dual norm."""
        return 2.0 if self is NormOrder.P2 else 1.0

    @property
    def order(self) -> float:
        return 2.0 if self is NormOrder.P2 else np.inf

    @classmethod
    def parse(cls, value) -> "NormOrder":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        if text in ("2", "2.0", "p2", "l2"):
            return cls.P2
        if text in ("inf", "infinity", "pinf", "linf", "∞"):
            return cls.PINF
        raise ValueError(
            f"unsupported norm order {value!r}; expected 2 or inf")


def symmetrize(a) -> np.ndarray:
    """Return a copy of ``a`` whose lower triangle mirrors the upper one."""
    a = np.array(a, dtype=float)
    upper = np.triu(a)
    return upper + np.triu(a, 1).T


def spectral_norm(a, max_iter: int = 200, rtol: float = 1e-12) -> float:
    """Largest absolute eigenvalue of a symmetric matrix by power iteration."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    # A deterministic start vector with no special structure.
    x = np.linspace(1.0, 2.0, n)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(max_iter):
        y = a @ x
        norm_y = np.linalg.norm(y)
        if norm_y == 0.0:
            return 0.0
        x = y / norm_y
        if abs(norm_y - estimate) <= rtol * norm_y:
            estimate = norm_y
            break
        estimate = norm_y
    return float(estimate)


@dataclass(frozen=True)
class TaskSuite:
    """Sample covariances and sample counts for K tasks sharing N variables."""

    covariances: np.ndarray
    sample_counts: np.ndarray

    def __post_init__(self):
        covs = np.array(self.covariances, dtype=float)
        if covs.ndim == 2:
            covs = covs[np.newaxis]
        if covs.ndim != 3 or covs.shape[1] != covs.shape[2]:
            raise ValueError("covariances must have shape (K, N, N)")
        if covs.shape[0] < 1 or covs.shape[1] < 2:
            raise ValueError("need K >= 1 tasks of order N >= 2")
        counts = np.atleast_1d(np.array(self.sample_counts, dtype=float))
        if counts.shape != (covs.shape[0],):
            raise ValueError("one sample count per task is required")
        if np.any(~np.isfinite(counts)) or np.any(counts <= 0):
            raise ValueError("sample counts must be positive")
        covs = np.stack([symmetrize(c) for c in covs])
        for k, c in enumerate(covs):
            tol = 1e-8 * (1.0 + np.max(np.diag(c)))
            if np.linalg.eigvalsh(c)[0] < -tol:
                raise DefinitenessError(
                    f"covariance of task {k} is not positive semidefinite")
        covs.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "sample_counts", counts)

    @property
    def n_tasks(self) -> int:
        return self.covariances.shape[0]

    @property
    def n_features(self) -> int:
        return self.covariances.shape[1]


@dataclass(frozen=True)
class ProblemSpec:
    """Regularization level, norm order and solver controls.

    ``objective_tol`` is relative to the objective; 0 runs all sweeps.
    """

    rho: float
    norm: NormOrder = NormOrder.PINF
    penalize_diagonal: bool = False
    max_sweeps: int = 10
    objective_tol: float = 1e-6
    newton_iters: int = 10

    def __post_init__(self):
        object.__setattr__(self, "norm", NormOrder.parse(self.norm))
        if not self.rho > 0 or not np.isfinite(self.rho):
            raise ValueError("rho must be a positive finite number")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if self.objective_tol < 0:
            raise ValueError("objective_tol must be nonnegative")
        if self.newton_iters < 1:
            raise ValueError("newton_iters must be at least 1")


@dataclass(frozen=True)
class PrecisionSet:
    """K symmetric positive definite precision matrices."""

    matrices: np.ndarray

    def __post_init__(self):
        mats = np.array(self.matrices, dtype=float)
        if mats.ndim == 2:
            mats = mats[np.newaxis]
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ValueError("precision matrices must have shape (K, N, N)")
        mats = np.stack([symmetrize(m) for m in mats])
        mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)

    @property
    def n_tasks(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrices.shape[1]

    def min_eigenvalues(self) -> np.ndarray:
        return np.array([np.linalg.eigvalsh(m)[0] for m in self.matrices])


@dataclass(frozen=True)
class EigenBounds:
    """Per-task lower and global upper eigenvalue bounds of the optimum."""

    lower: np.ndarray
    upper: float = field(default=np.inf)


def _logdet(prec: np.ndarray) -> float:
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        raise DefinitenessError("precision matrix is not positive definite")
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def gaussian_log_likelihood(cov, prec) -> float:
    """Return ``log det(prec) - <cov, prec>``.

    The sample-count weighting and the conventional factor 1/2 are not
    applied here.
    """
    cov = np.asarray(cov, dtype=float)
    prec = np.asarray(prec, dtype=float)
    if cov.shape != prec.shape:
        raise ValueError("covariance and precision orders differ")
    return _logdet(prec) - float(np.sum(cov * prec))


def _as_stack(precs) -> np.ndarray:
    if isinstance(precs, PrecisionSet):
        return precs.matrices
    arr = np.asarray(precs, dtype=float)
    return arr[np.newaxis] if arr.ndim == 2 else arr


def l1p_norm(precs, norm) -> float:
    """Sum over all N*N positions of the l_p norm across tasks."""
    stack = _as_stack(precs)
    order = NormOrder.parse(norm).order
    return float(np.sum(np.linalg.norm(stack, ord=order, axis=0)))


def penalty(precs, norm, penalize_diagonal: bool) -> float:
    """The regularizer value, excluding the diagonal unless penalized."""
    stack = _as_stack(precs)
    order = NormOrder.parse(norm).order
    per_position = np.linalg.norm(stack, ord=order, axis=0)
    total = float(np.sum(per_position))
    if not penalize_diagonal:
        total -= float(np.sum(np.diag(per_position)))
    return total


def _check_shapes(suite: TaskSuite, stack: np.ndarray):
    if stack.shape != suite.covariances.shape:
        raise ValueError(
            f"precision stack shape {stack.shape} does not match "
            f"covariance stack shape {suite.covariances.shape}")


def multitask_objective(suite: TaskSuite, precs, spec: ProblemSpec) -> float:
    """Penalized multi-task log-likelihood (to be maximized)."""
    stack = _as_stack(precs)
    _check_shapes(suite, stack)
    loglik = sum(
        t * gaussian_log_likelihood(c, p)
        for t, c, p in zip(suite.sample_counts, suite.covariances, stack))
    reg = penalty(stack, spec.norm, spec.penalize_diagonal)
    return loglik - spec.rho * reg


def eigenvalue_bounds(suite: TaskSuite, spec: ProblemSpec) -> EigenBounds:
    """Eigenvalue bounds satisfied by the optimal precision matrices.

    ``lower[k] = 1 / (||S_k||_2 + N rho / T_k)``. With a penalized diagonal
    ``upper = N sum_k T_k / rho``, which is ``N K / rho`` for unit sample
    counts. Without diagonal penalty the regularizer does not control the
    diagonal, and the upper bound is the Gershgorin-type
    ``max_n 1/S_k[n, n] + B^2 / lower[k] + B`` with ``B = N sum_k T_k / rho``
    bounding every off-diagonal row sum.
    """
    n = suite.n_features
    lower = np.array([
        1.0 / (spectral_norm(c) + n * spec.rho / t)
        for c, t in zip(suite.covariances, suite.sample_counts)])
    budget = n * float(np.sum(suite.sample_counts)) / spec.rho
    if spec.penalize_diagonal:
        return EigenBounds(lower=lower, upper=budget)
    inv_var = np.array([np.max(1.0 / np.diag(c)) for c in suite.covariances])
    upper = float(np.max(inv_var + budget ** 2 / lower + budget))
    return EigenBounds(lower=lower, upper=upper)


def optimality_residual(suite: TaskSuite, precs, spec: ProblemSpec) -> float:
    """``|-N sum_k T_k + sum_k T_k <S_k, W_k> + rho R(W)|``.

    Zero at the exact optimum (for unit sample counts the constant is N K).

    Diagnostic only: away from the optimum the value is not a bound on
    suboptimality.
    """
    stack = _as_stack(precs)
    _check_shapes(suite, stack)
    total = suite.n_features * float(np.sum(suite.sample_counts))
    fit = sum(t * float(np.sum(c * p)) for t, c, p in
              zip(suite.sample_counts, suite.covariances, stack))
    reg = penalty(stack, spec.norm, spec.penalize_diagonal)
    return abs(-total + fit + spec.rho * reg)

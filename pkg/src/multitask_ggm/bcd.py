"""Block coordinate descent for the l1,p multi-task GGM problem.

Each outer step selects a variable ``n`` and, for every task, splits the
precision matrix into the block ``W`` (row/column ``n`` removed), the
off-diagonal column ``y`` and the diagonal entry ``z``. The inner loop runs
coordinate descent over the entries of ``y`` jointly across tasks, each
coordinate being a K-dimensional separable l_p regularized quadratic. The
diagonal is then set in closed form (unpenalized) or through a separable
logarithmic problem (penalized).

The solver keeps the full inverse of every precision matrix. ``W^{-1}`` for
the current variable is a rank-one downdate of it, and the new inverse after
the update is a rank-one update of ``W^{-1}``. The inverses are refactorized
from scratch at the start of every sweep to bound drift.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _backend
from .model import (DegenerateInputError, NormOrder, PrecisionSet,
                    ProblemSpec, TaskSuite, multitask_objective)
from .subproblems import (SeparableLogarithmic, SeparableQuadratic,
                          solve_lp_separable_log, solve_lp_separable_quadratic)

logger = logging.getLogger(__name__)

__all__ = [
    "InternalStateError",
    "SolverError",
    "BlockView",
    "InnerView",
    "FitReport",
    "initialize",
    "screen_blocks",
    "screening_threshold",
    "block_view",
    "inner_view",
    "update_w_inverse",
    "off_diagonal_step",
    "diagonal_step",
    "solve",
]


class InternalStateError(RuntimeError):
    """The solver state lost positive definiteness and could not recover."""


class SolverError(RuntimeError):
    """A solve aborted; ``report`` holds the diagnostics gathered so far."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class FitReport:
    objective_trace: list = field(default_factory=list)
    min_eig_trace: list = field(default_factory=list)
    screened_blocks: list = field(default_factory=list)
    sweeps_run: int = 0
    newton_fallbacks: int = 0
    wall_time: float = 0.0
    initial_objective: float = math.nan
    converged: bool = False
    inverse_refreshes: int = 0
    backend: str = ""

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "objective_trace": [float(v) for v in self.objective_trace],
            "min_eig_trace": [[float(v) for v in row]
                              for row in self.min_eig_trace],
            "screened_blocks": [int(n) for n in self.screened_blocks],
            "sweeps_run": int(self.sweeps_run),
            "newton_fallbacks": int(self.newton_fallbacks),
            "initial_objective": float(self.initial_objective),
            "converged": bool(self.converged),
            "inverse_refreshes": int(self.inverse_refreshes),
        }
        if include_timing:
            out["wall_time"] = float(self.wall_time)
        return out


@dataclass(frozen=True)
class BlockView:
    """Split of one task around variable ``n``.

    ``W``/``S`` drop row and column ``n``; ``y``/``u`` are column ``n``
    without its diagonal; ``z``/``v`` are the diagonal entries.
    """

    n: int
    W: np.ndarray
    y: np.ndarray
    z: float
    S: np.ndarray
    u: np.ndarray
    v: float
    sample_count: float

    def reassemble(self) -> np.ndarray:
        m = self.W.shape[0] + 1
        idx = np.r_[0:self.n, self.n + 1:m]
        out = np.empty((m, m))
        out[np.ix_(idx, idx)] = self.W
        out[idx, self.n] = self.y
        out[self.n, idx] = self.y
        out[self.n, self.n] = self.z
        return out


@dataclass(frozen=True)
class InnerView:
    """Split of ``W^{-1}``, ``y`` and ``u`` around inner coordinate ``j``."""

    H11: np.ndarray
    h12: np.ndarray
    h22: float
    y1: np.ndarray
    u1: np.ndarray
    u2: float
    x: float
    sample_count: float
    v: float


def _drop(n, m):
    return np.r_[0:n, n + 1:m]


def block_view(suite: TaskSuite, precs, n: int) -> list:
    """Per-task :class:`BlockView` of variable ``n``."""
    stack = precs.matrices if isinstance(precs, PrecisionSet) else precs
    m = suite.n_features
    idx = _drop(n, m)
    views = []
    for t, cov, prec in zip(suite.sample_counts, suite.covariances, stack):
        views.append(BlockView(
            n=n, W=prec[np.ix_(idx, idx)].copy(), y=prec[idx, n].copy(),
            z=float(prec[n, n]), S=cov[np.ix_(idx, idx)].copy(),
            u=cov[idx, n].copy(), v=float(cov[n, n]), sample_count=float(t)))
    return views


def inner_view(view: BlockView, w_inv: np.ndarray, j: int) -> InnerView:
    """Split a block view around its inner coordinate ``j``."""
    rest = _drop(j, w_inv.shape[0])
    return InnerView(
        H11=w_inv[np.ix_(rest, rest)], h12=w_inv[rest, j],
        h22=float(w_inv[j, j]), y1=view.y[rest], u1=view.u[rest],
        u2=float(view.u[j]), x=float(view.y[j]),
        sample_count=view.sample_count, v=view.v)


def initialize(suite: TaskSuite) -> PrecisionSet:
    """Diagonal start ``diag(S_k)^{-1}`` for every task."""
    diags = np.stack([np.diag(c) for c in suite.covariances])
    if np.any(diags <= 0.0):
        k, n = np.argwhere(diags <= 0.0)[0]
        raise DegenerateInputError(
            f"variable {n} of task {k} has zero sample variance")
    return PrecisionSet(np.stack([np.diag(1.0 / d) for d in diags]))


def screening_threshold(suite: TaskSuite, norm) -> np.ndarray:
    """Per variable, the smallest ``rho`` at which its block is screened.

    Entry ``n`` is ``max_{n' != n} ||(T_k S_k[n', n])_k||_dual``.
    """
    dual = NormOrder.parse(norm).dual
    scaled = suite.sample_counts[:, None, None] * suite.covariances
    norms = np.linalg.norm(scaled, ord=dual, axis=0)
    np.fill_diagonal(norms, 0.0)
    return norms.max(axis=0)


def screen_blocks(suite: TaskSuite, spec: ProblemSpec) -> frozenset:
    """Variables whose whole off-diagonal column is zero at the optimum."""
    thresholds = screening_threshold(suite, spec.norm)
    return frozenset(int(n) for n in np.flatnonzero(thresholds <= spec.rho))


def update_w_inverse(w_inv: np.ndarray, j: int, delta: np.ndarray,
                     ) -> np.ndarray:
    """Inverse of ``W + e_j delta' + delta e_j'`` (diagonal delta halved).

    ``delta`` is the change of row/column ``j`` of ``W``; ``delta[j]`` is
    the change of the diagonal entry. Uses a rank-two Sherman-Woodbury-
    Morrison correction. Raises ``np.linalg.LinAlgError`` when the updated
    matrix is not positive definite.
    """
    w_inv = np.asarray(w_inv, dtype=float)
    d = np.array(delta, dtype=float)
    d[j] *= 0.5
    m = w_inv.shape[0]
    e = np.zeros(m)
    e[j] = 1.0
    U = np.column_stack([e, d])
    V = np.column_stack([d, e])
    AU = w_inv @ U
    core = np.eye(2) + V.T @ AU
    new = w_inv - AU @ np.linalg.solve(core, V.T @ w_inv)
    new = 0.5 * (new + new.T)
    # A symmetric matrix is PD iff its inverse is; the Schur pivots of the
    # refreshed inverse must stay positive.
    np.linalg.cholesky(new)
    return new


def _quadratic_coefficients(view: InnerView):
    t, v = view.sample_count, view.v
    q = t * v * view.h22
    c = -t * (v * float(view.h12 @ view.y1) + view.u2)
    return q, c


def off_diagonal_step(views, spec: ProblemSpec) -> np.ndarray:
    """New value of the shared inner coordinate for every task."""
    coeffs = [_quadratic_coefficients(v) for v in views]
    q = np.array([a for a, _ in coeffs])
    c = np.array([b for _, b in coeffs])
    prob = SeparableQuadratic(q=q, c=c, rho=spec.rho)
    return solve_lp_separable_quadratic(prob, spec.norm, spec.newton_iters)


def diagonal_step(views, w_invs, spec: ProblemSpec) -> np.ndarray:
    """Optimal diagonal entry ``z`` of every task for the given blocks."""
    b = np.array([max(float(v.y @ w @ v.y), 0.0)
                  for v, w in zip(views, w_invs)])
    vs = np.array([v.v for v in views])
    ts = np.array([v.sample_count for v in views])
    if not spec.penalize_diagonal:
        return 1.0 / vs + b
    prob = SeparableLogarithmic(q=ts, c=ts * vs, b=b, rho=spec.rho)
    z, _, _ = solve_lp_separable_log(prob, spec.norm, spec.newton_iters)
    return z


def _fresh_inverse(omega: np.ndarray) -> np.ndarray:
    out = np.empty_like(omega)
    for k, m in enumerate(omega):
        try:
            chol = np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            raise InternalStateError(
                f"precision matrix of task {k} is not positive definite")
        inv_chol = np.linalg.inv(chol)
        out[k] = inv_chol.T @ inv_chol
        out[k] = 0.5 * (out[k] + out[k].T)
    return out


def solve(suite: TaskSuite, spec: ProblemSpec, *, screening: bool = True,
          callback: Optional[Callable] = None,
          track_eigenvalues: bool = True,
          backend: Optional[str] = None):
    """Run block coordinate descent.

    Parameters
    ----------
    suite, spec
        Problem data and settings.
    screening : bool
        Apply the zero-block screening rule before the sweeps. Disabling it
        only changes the work done, not the optimum.
    callback : callable, optional
        Called as ``callback(sweep, n, omega)`` after every variable update
        with a read-only view of the current ``(K, N, N)`` stack.
    track_eigenvalues : bool
        Record per-task minimum eigenvalues after each sweep.
    backend : {"compiled", "python"}, optional
        Kernel override; defaults to the one selected at import.

    Returns
    -------
    precs : PrecisionSet
    report : FitReport
    """
    kernel = _backend.get_kernel(backend)
    start = time.perf_counter()
    report = FitReport(backend=kernel.name)
    omega = np.array(initialize(suite).matrices)
    cov = np.ascontiguousarray(suite.covariances, dtype=float)
    counts = np.ascontiguousarray(suite.sample_counts, dtype=float)
    n_feat = suite.n_features
    screened_set = screen_blocks(suite, spec) if screening else frozenset()
    report.screened_blocks = sorted(screened_set)
    screened = np.zeros(n_feat, dtype=np.uint8)
    screened[list(screened_set)] = 1
    p_inf = spec.norm is NormOrder.PINF

    previous = multitask_objective(suite, omega, spec)
    report.initial_objective = previous
    try:
        for sweep in range(spec.max_sweeps):
            sigma = _fresh_inverse(omega)
            report.inverse_refreshes += 1
            for n in range(n_feat):
                try:
                    report.newton_fallbacks += kernel.update_variable(
                        omega, sigma, cov, counts, n, spec.rho, p_inf,
                        spec.penalize_diagonal, screened, spec.newton_iters)
                except kernel.KernelStateError:
                    logger.debug("refreshing inverse at sweep %d var %d",
                                 sweep, n)
                    sigma = _fresh_inverse(omega)
                    report.inverse_refreshes += 1
                    try:
                        report.newton_fallbacks += kernel.update_variable(
                            omega, sigma, cov, counts, n, spec.rho, p_inf,
                            spec.penalize_diagonal, screened,
                            spec.newton_iters)
                    except kernel.KernelStateError as exc:
                        raise InternalStateError(str(exc)) from exc
                if callback is not None:
                    view = omega.view()
                    view.setflags(write=False)
                    callback(sweep, n, view)
            current = multitask_objective(suite, omega, spec)
            report.objective_trace.append(current)
            if track_eigenvalues:
                report.min_eig_trace.append(
                    [float(np.linalg.eigvalsh(m)[0]) for m in omega])
            report.sweeps_run = sweep + 1
            change = abs(current - previous)
            previous = current
            # A zero tolerance disables early stopping.
            if (spec.objective_tol > 0.0 and
                    change <= spec.objective_tol * abs(current)):
                report.converged = True
                break
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        report.wall_time = time.perf_counter() - start
        raise SolverError(f"solve aborted: {exc}", report) from exc
    report.wall_time = time.perf_counter() - start
    if report.newton_fallbacks:
        logger.info("%d inner solves needed safeguarded refinement",
                    report.newton_fallbacks)
    return PrecisionSet(omega), report

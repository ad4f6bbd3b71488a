"""Synthetic ground truth, sampling and recovery metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bcd import screening_threshold, solve
from .model import (DefinitenessError, PrecisionSet, ProblemSpec, TaskSuite,
                    _logdet)

logger = logging.getLogger(__name__)

MIN_EIGENVALUE = 0.1
MAX_RESAMPLES = 100


@dataclass(frozen=True)
class GroundTruth:
    """Shared topology and one precision matrix per task."""

    topology: np.ndarray
    models: np.ndarray
    density: float

    @property
    def n_features(self) -> int:
        return self.topology.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.models.shape[0]


@dataclass(frozen=True)
class SupportMetrics:
    sensitivity: float
    specificity: float
    threshold: float


@dataclass(frozen=True)
class RocPoint:
    rho: float
    metrics: Optional[SupportMetrics]
    kl_mean: float
    error: Optional[str] = None


@dataclass(frozen=True)
class RocResult:
    points: list
    auc: Optional[float]


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_ground_truth(n_features: int, n_tasks: int, density: float,
                          seed=None) -> GroundTruth:
    """Random shared topology with per-task uniform[-1, 1] edge weights.

    Each model has unit diagonal. Weights are redrawn until the minimum
    eigenvalue reaches 0.1; after 100 failed draws the diagonal is shifted
    just enough instead.
    """
    if n_features < 2 or n_tasks < 1 or not 0.0 < density < 1.0:
        raise ValueError("need N >= 2, K >= 1 and 0 < density < 1")
    rng = _rng(seed)
    iu, ju = np.triu_indices(n_features, 1)
    n_edges = int(math.floor(density * len(iu)))
    chosen = rng.choice(len(iu), size=n_edges, replace=False)
    topology = np.zeros((n_features, n_features), dtype=np.int8)
    topology[iu[chosen], ju[chosen]] = 1
    topology[ju[chosen], iu[chosen]] = 1

    models = np.empty((n_tasks, n_features, n_features))
    for k in range(n_tasks):
        for _ in range(MAX_RESAMPLES):
            model = np.eye(n_features)
            w = rng.uniform(-1.0, 1.0, size=n_edges)
            model[iu[chosen], ju[chosen]] = w
            model[ju[chosen], iu[chosen]] = w
            low = np.linalg.eigvalsh(model)[0]
            if low >= MIN_EIGENVALUE:
                break
        else:
            model += (MIN_EIGENVALUE - low + 1e-6) * np.eye(n_features)
        models[k] = model
    return GroundTruth(topology=topology, models=models, density=density)


def sample_dataset(truth: GroundTruth, sample_counts, seed=None) -> list:
    """Draw ``T_k`` zero-mean Gaussian samples per task (rows = samples)."""
    rng = _rng(seed)
    counts = np.broadcast_to(np.asarray(sample_counts, dtype=int),
                             (truth.n_tasks,))
    out = []
    for model, t in zip(truth.models, counts):
        cov = np.linalg.inv(model)
        chol = np.linalg.cholesky(0.5 * (cov + cov.T))
        out.append(rng.standard_normal((int(t), truth.n_features)) @ chol.T)
    return out


def kl_divergence(truth_prec, est_prec) -> float:
    """KL(N(0, truth^-1) || N(0, est^-1))."""
    truth_prec = np.asarray(truth_prec, dtype=float)
    est_prec = np.asarray(est_prec, dtype=float)
    if truth_prec.shape != est_prec.shape:
        raise ValueError("orders differ")
    n = truth_prec.shape[0]
    ld_truth = _logdet(truth_prec)
    ld_est = _logdet(est_prec)
    trace = float(np.trace(np.linalg.solve(truth_prec, est_prec)))
    return 0.5 * (trace - n + ld_truth - ld_est)


def default_threshold(est) -> float:
    """Edge-call threshold: 1e-6 of the largest absolute entry."""
    stack = est.matrices if isinstance(est, PrecisionSet) else np.asarray(est)
    return 1e-6 * float(np.max(np.abs(stack)))


def called_edges(est, threshold: float) -> np.ndarray:
    stack = est.matrices if isinstance(est, PrecisionSet) else np.asarray(est)
    calls = np.max(np.abs(stack), axis=0) > threshold
    np.fill_diagonal(calls, False)
    return calls


def support_metrics(truth, est, threshold: Optional[float] = None
                    ) -> SupportMetrics:
    """Sensitivity and specificity over unordered off-diagonal pairs.

    ``truth`` is a :class:`GroundTruth` or a binary adjacency matrix.
    """
    topology = truth.topology if isinstance(truth, GroundTruth) else truth
    topology = np.asarray(topology) != 0
    if threshold is None:
        threshold = default_threshold(est)
    calls = called_edges(est, threshold)
    iu = np.triu_indices(topology.shape[0], 1)
    actual = topology[iu]
    called = calls[iu]
    n_pos = int(actual.sum())
    n_neg = int((~actual).sum())
    sens = float((called & actual).sum() / n_pos) if n_pos else 1.0
    spec = float((~called & ~actual).sum() / n_neg) if n_neg else 1.0
    return SupportMetrics(sensitivity=sens, specificity=spec,
                          threshold=float(threshold))


def roc_auc(points: Sequence[RocPoint]) -> Optional[float]:
    """Trapezoidal area under (1 - specificity, sensitivity).

    The curve is anchored at (0, 0) and (1, 1). Returns ``None`` with fewer
    than two valid points.
    """
    valid = [p.metrics for p in points if p.metrics is not None]
    if len(valid) < 2:
        return None
    xy = sorted((1.0 - m.specificity, m.sensitivity) for m in valid)
    xy = [(0.0, 0.0)] + xy + [(1.0, 1.0)]
    x = np.array([a for a, _ in xy])
    y = np.array([b for _, b in xy])
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) * 0.5))


def default_rho_grid(suite: TaskSuite, norm, size: int = 20,
                     span: float = 1e-2) -> np.ndarray:
    """Log-spaced grid from the full-screening level down by ``span``."""
    top = float(np.max(screening_threshold(suite, norm)))
    if top <= 0.0:
        top = 1.0
    return np.geomspace(top, top * span, size)


def roc_sweep(suite: TaskSuite, truth: GroundTruth, spec: ProblemSpec,
              rho_grid, threshold: Optional[float] = None,
              callback=None, monitor=None) -> RocResult:
    """Solve at every ``rho`` and score support recovery and KL divergence.

    Failed solves are recorded with ``metrics=None`` and do not stop the
    sweep. ``callback(rho, precs, report)`` sees every successful solve and
    ``monitor(rho, sweep, n, omega)`` every variable update inside it.
    """
    points = []
    for rho in sorted(float(r) for r in rho_grid):
        run_spec = ProblemSpec(
            rho=rho, norm=spec.norm, penalize_diagonal=spec.penalize_diagonal,
            max_sweeps=spec.max_sweeps, objective_tol=spec.objective_tol,
            newton_iters=spec.newton_iters)
        try:
            hook = (None if monitor is None else
                    lambda sweep, n, omega, _rho=rho:
                    monitor(_rho, sweep, n, omega))
            precs, report = solve(suite, run_spec, track_eigenvalues=False,
                                  callback=hook)
            metrics = support_metrics(truth, precs, threshold)
            kl = float(np.mean([kl_divergence(t, e) for t, e in
                                zip(truth.models, precs.matrices)]))
        except (ArithmeticError, RuntimeError, DefinitenessError) as exc:
            logger.warning("solve failed at rho=%g: %s", rho, exc)
            points.append(RocPoint(rho=rho, metrics=None, kl_mean=math.nan,
                                   error=str(exc)))
            continue
        if callback is not None:
            callback(rho, precs, report)
        points.append(RocPoint(rho=rho, metrics=metrics, kl_mean=kl))
    return RocResult(points=points, auc=roc_auc(points))

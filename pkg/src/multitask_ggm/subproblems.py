"""Separable inner problems solved at every block update.

Four problems arise:

* l_inf / l_2 regularized separable quadratics (off-diagonal step), solved
  through a continuous quadratic knapsack or a trust-region dual.
* their logarithmic counterparts (penalized diagonal step), solved through a
  continuous logarithmic knapsack or a logarithmic trust-region dual.

All one-dimensional root finds use a fixed number of Newton-Raphson steps
followed, only when the derivative residual is still large, by a bracketed
Newton/bisection refinement. The refinement is reported to callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import NormOrder

__all__ = [
    "NumericError",
    "SeparableQuadratic",
    "SeparableLogarithmic",
    "KnapsackSolution",
    "TrustRegionSolution",
    "NewtonResult",
    "newton_1d",
    "solve_lp_separable_quadratic",
    "solve_quadratic_knapsack",
    "solve_trust_region_dual",
    "solve_log_knapsack",
    "solve_log_trust_region",
    "solve_lp_separable_log",
]

#: Residual tolerance (relative to the natural scale of each dual) below
#: which the plain Newton result is accepted without refinement.
RESIDUAL_RTOL = 1e-12
#: Maximum number of safeguarded refinement steps.
MAX_REFINE_STEPS = 50


class NumericError(ArithmeticError):
    """Non-finite or non-convex quantity met inside an inner solver."""


@dataclass(frozen=True)
class SeparableQuadratic:
    """min 0.5 x' diag(q) x - c' x + rho ||x||_p."""

    q: np.ndarray
    c: np.ndarray
    rho: float

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if q.shape != c.shape or q.ndim != 1:
            raise ValueError("q and c must be vectors of equal length")
        if np.any(q <= 0) or not self.rho > 0:
            raise ValueError("q and rho must be strictly positive")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", c)


@dataclass(frozen=True)
class SeparableLogarithmic:
    """max sum_k q_k log(z_k - b_k) - c' z - rho ||z||_p over z > b."""

    q: np.ndarray
    c: np.ndarray
    b: np.ndarray
    rho: float

    def __post_init__(self):
        q, c, b = (np.atleast_1d(np.asarray(a, dtype=float))
                   for a in (self.q, self.c, self.b))
        if not (q.shape == c.shape == b.shape) or q.ndim != 1:
            raise ValueError("q, c and b must be vectors of equal length")
        if np.any(q <= 0) or np.any(c <= 0) or np.any(b < 0):
            raise ValueError("need q > 0, c > 0 and b >= 0")
        if not self.rho > 0:
            raise ValueError("rho must be strictly positive")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)

    def z_from_r(self, r) -> np.ndarray:
        return self.b + self.q / (self.c + np.asarray(r, dtype=float))


@dataclass(frozen=True)
class KnapsackSolution:
    """Solution of a continuous (quadratic or logarithmic) knapsack.

    ``g`` holds the primal knapsack variables (``r`` in the log variant),
    ``nu`` the multiplier of the equality constraint and ``active_count``
    the number of strictly positive variables.
    """

    g: np.ndarray
    nu: float
    active_count: int
    refined: bool = False


@dataclass(frozen=True)
class TrustRegionSolution:
    x: np.ndarray
    lam: float
    refined: bool = False


@dataclass(frozen=True)
class NewtonResult:
    x: float
    residual: float


def _check_finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {what} ({value!r})")
    return value


def newton_1d(fprime: Callable[[float], float],
              fsecond: Callable[[float], float],
              x0: float, iters: int, lower: float = -math.inf,
              upper: float = math.inf,
              open_lower: bool = False) -> NewtonResult:
    """Minimize a strictly convex 1-D function by Newton steps on ``fprime``.

    Each iterate is clamped to ``[lower, upper]``. With ``open_lower`` the
    lower end is treated as excluded (a pole of the function) and a step
    past it moves halfway from the current iterate to the boundary instead.
    """
    x = float(x0)
    for _ in range(iters):
        d1 = _check_finite(fprime(x), "first derivative")
        d2 = _check_finite(fsecond(x), "second derivative")
        if d2 <= 0.0:
            raise NumericError(f"non-positive curvature {d2!r} at x={x!r}")
        step = x - d1 / d2
        if step < lower or (open_lower and step <= lower):
            step = 0.5 * (x + lower) if open_lower else lower
        if step > upper:
            step = upper
        if step == x:
            break
        x = step
    return NewtonResult(x=x, residual=abs(fprime(x)))


def _refine(fprime, fsecond, x: float, lo: float, hi: float,
            tol: float) -> float:
    """Bracketed Newton/bisection on an increasing ``fprime``.

    ``fprime(lo) <= 0 <= fprime(hi)`` is assumed; ``lo`` may be a pole.
    """
    for _ in range(MAX_REFINE_STEPS):
        d1 = fprime(x)
        if abs(d1) <= tol:
            break
        if d1 < 0.0:
            lo = x
        else:
            hi = x
        d2 = fsecond(x)
        step = x - d1 / d2 if d2 > 0.0 and math.isfinite(d2) else math.nan
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        if step == x:
            break
        x = step
    return x


# ---------------------------------------------------------------------------
# Quadratic problems (off-diagonal step)
# ---------------------------------------------------------------------------

def solve_quadratic_knapsack(q, a, rho: float) -> KnapsackSolution:
    """min sum (g_k - a_k)^2 / (2 q_k)  s.t.  g >= 0, sum g = rho.

    Breakpoints ``a_k / q_k`` are sorted in decreasing order (stable on
    ties) and prefix sums are scanned for the active range.
    """
    q = np.asarray(q, dtype=float)
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0) or np.any(q <= 0):
        raise ValueError("knapsack needs strictly positive q and a")
    if not a.sum() > rho:
        raise ValueError("sum(a) <= rho: the unconstrained point is feasible")
    breaks = a / q
    order = np.argsort(-breaks, kind="stable")
    sum_a = 0.0
    sum_q = 0.0
    nu = 0.0
    active = 0
    for i, k in enumerate(order):
        sum_a += a[k]
        sum_q += q[k]
        nu = (sum_a - rho) / sum_q
        nxt = breaks[order[i + 1]] if i + 1 < len(order) else 0.0
        if nu >= nxt:
            active = i + 1
            break
    g = np.maximum(0.0, a - nu * q)
    return KnapsackSolution(g=g, nu=float(nu), active_count=active)


def _tr_derivatives(q: np.ndarray, c2: np.ndarray, rho: float):
    rho2 = rho * rho

    def fprime(lam):
        return rho2 - float(np.sum(c2 / (1.0 + lam * q) ** 2))

    def fsecond(lam):
        return 2.0 * float(np.sum(c2 * q / (1.0 + lam * q) ** 3))

    return fprime, fsecond


def solve_trust_region_dual(q, c, rho: float,
                            iters: int = 10) -> TrustRegionSolution:
    """Minimize sum c_k^2/(q_k + lam q_k^2) + rho^2 lam over lam >= 0.

    Newton-Raphson from ``lam = 0``. Returns the multiplier and the primal
    minimizer ``x = lam c / (1 + lam q)`` of the l2-regularized quadratic.
    """
    q = np.asarray(q, dtype=float)
    c = np.asarray(c, dtype=float)
    c2 = c * c
    norm_c = math.sqrt(float(np.sum(c2)))
    if not norm_c > rho:
        raise ValueError("||c||_2 <= rho: the unconstrained point is feasible")
    fprime, fsecond = _tr_derivatives(q, c2, rho)
    res = newton_1d(fprime, fsecond, 0.0, iters, lower=0.0)
    lam = res.x
    refined = False
    tol = RESIDUAL_RTOL * rho * rho
    if res.residual > tol:
        hi = (norm_c / rho - 1.0) / float(np.min(q))
        lam = _refine(fprime, fsecond, lam, 0.0, hi, tol)
        refined = True
    _check_finite(lam, "trust-region multiplier")
    return TrustRegionSolution(x=lam * c / (1.0 + lam * q), lam=float(lam),
                               refined=refined)


def _solve_lp_quadratic(q: np.ndarray, c: np.ndarray, rho: float,
                        norm: NormOrder, iters: int):
    x = np.zeros_like(c)
    nz = c != 0.0
    if not np.any(nz):
        return x, False
    qn, cn = q[nz], c[nz]
    if norm is NormOrder.PINF:
        a = np.abs(cn)
        if a.sum() <= rho:
            return x, False
        sol = solve_quadratic_knapsack(qn, a, rho)
        x[nz] = (cn - np.sign(cn) * sol.g) / qn
        return x, False
    if math.sqrt(float(np.sum(cn * cn))) <= rho:
        return x, False
    sol = solve_trust_region_dual(qn, cn, rho, iters)
    x[nz] = sol.x
    return x, sol.refined


def solve_lp_separable_quadratic(prob: SeparableQuadratic, norm,
                                 iters: int = 10) -> np.ndarray:
    """Unique minimizer of ``0.5 x' diag(q) x - c' x + rho ||x||_p``."""
    x, _ = _solve_lp_quadratic(prob.q, prob.c, prob.rho,
                               NormOrder.parse(norm), iters)
    return x


# ---------------------------------------------------------------------------
# Logarithmic problems (penalized diagonal step)
# ---------------------------------------------------------------------------

def _log_knapsack_sum(q, c, b, nu):
    """sum_k r_k(nu) for nu > max(b)."""
    r = q / (nu - b) - c
    return float(np.sum(np.maximum(r, 0.0)))


def solve_log_knapsack(prob: SeparableLogarithmic,
                       iters: int = 10) -> KnapsackSolution:
    """min -sum q_k log(r_k + c_k) - b'r  s.t.  r >= 0, sum r = rho.

    Returns ``r`` in the ``g`` field of the solution.
    """
    q, c, b, rho = prob.q, prob.c, prob.b, prob.rho
    b_max = float(np.max(b))
    breaks = q / c + b
    order = np.argsort(-breaks, kind="stable")
    n = len(order)
    active = n
    for i in range(n):
        nxt = breaks[order[i + 1]] if i + 1 < n else 0.0
        if nxt <= b_max:
            active = i + 1
            break
        sel = order[: i + 1]
        if float(np.sum(q[sel] / (nxt - b[sel]) - c[sel])) >= rho:
            active = i + 1
            break
    sel = order[:active]
    qa, ca, ba = q[sel], c[sel], b[sel]
    upper = float(breaks[order[active - 1]])
    nxt = float(breaks[order[active]]) if active < n else 0.0
    if nxt > b_max:
        lower, open_lower = nxt, False
    else:
        lower, open_lower = b_max, True

    def fprime(nu):
        return rho - float(np.sum(qa / (nu - ba) - ca))

    def fsecond(nu):
        return float(np.sum(qa / (nu - ba) ** 2))

    eps = 1e-6 * (1.0 + b_max)
    nu0 = max(b_max + eps, upper)
    if nu0 > upper:
        # The offset start lies beyond the range; begin inside it instead.
        nu0 = 0.5 * (lower + upper)
    res = newton_1d(fprime, fsecond, nu0, iters, lower=lower, upper=upper,
                    open_lower=open_lower)
    nu = res.x
    refined = False
    tol = RESIDUAL_RTOL * rho
    if res.residual > tol:
        nu = _refine(fprime, fsecond, nu, lower, upper, tol)
        refined = True
    _check_finite(nu, "log-knapsack multiplier")
    if nu <= b_max:
        raise NumericError("log-knapsack multiplier fell onto its pole")
    r = np.zeros_like(q)
    r[sel] = np.maximum(qa / (nu - ba) - ca, 0.0)
    return KnapsackSolution(g=r, nu=float(nu), active_count=int(active),
                            refined=refined)


def _log_tr_r(q, c, b, lam):
    """Stationary r_k(lam) of the log trust-region Lagrangian, lam > 0."""
    disc = np.sqrt((b + lam * c) ** 2 + 4.0 * lam * q)
    t = lam * c - b
    r = np.empty_like(q)
    pos = t >= 0.0
    # Rationalized form avoids cancellation when lam*c >= b.
    r[pos] = 2.0 * (q[pos] + b[pos] * c[pos]) / (disc[pos] + t[pos])
    neg = ~pos
    r[neg] = (disc[neg] - t[neg]) / (2.0 * lam)
    return r, disc


def _single_task_lambda(q, c, b, radius):
    return (q + b * (c + radius)) / (radius * (c + radius))


def solve_log_trust_region(prob: SeparableLogarithmic, iters: int = 10):
    """min -sum q_k log(r_k + c_k) - b'r  s.t.  r >= 0, ||r||_2 <= rho.

    Solved through the one-dimensional dual in ``lam``. Returns
    ``(r, lam, refined)``.
    """
    q, c, b, rho = prob.q, prob.c, prob.b, prob.rho
    k = len(q)
    rho2 = rho * rho

    def fprime(lam):
        r, _ = _log_tr_r(q, c, b, lam)
        return 0.5 * (rho2 - float(np.dot(r, r)))

    def fsecond(lam):
        r, disc = _log_tr_r(q, c, b, lam)
        dr = -(r * r + c * r) / disc
        return -float(np.dot(r, dr))

    # Every r_k >= rho below lo and every r_k <= rho/sqrt(K) above hi.
    lo = float(np.min(_single_task_lambda(q, c, b, rho)))
    hi = float(np.max(_single_task_lambda(q, c, b, rho / math.sqrt(k))))
    lam0 = float(np.mean(_single_task_lambda(q, c, b, rho)))
    res = newton_1d(fprime, fsecond, lam0, iters, lower=lo, upper=hi)
    lam = res.x
    refined = False
    tol = RESIDUAL_RTOL * rho2
    if res.residual > tol:
        lam = _refine(fprime, fsecond, lam, lo, hi, tol)
        refined = True
    _check_finite(lam, "log trust-region multiplier")
    r, _ = _log_tr_r(q, c, b, lam)
    return r, float(lam), refined


def solve_lp_separable_log(prob: SeparableLogarithmic, norm,
                           iters: int = 10):
    """Maximizer ``z`` of the l_p regularized separable logarithmic problem.

    Returns ``(z, r, refined)`` where ``r`` is the dual solution.
    """
    if NormOrder.parse(norm) is NormOrder.PINF:
        sol = solve_log_knapsack(prob, iters)
        r, refined = sol.g, sol.refined
    else:
        r, _, refined = solve_log_trust_region(prob, iters)
    z = prob.z_from_r(r)
    if np.any(z - prob.b <= 0.0):
        raise NumericError("diagonal update lost positivity of the Schur "
                           "complement")
    return z, r, refined

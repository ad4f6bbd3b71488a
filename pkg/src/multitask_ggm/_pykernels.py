"""Pure-Python block update kernel.

Mirrors ``_kernels.pyx`` line for line in intent; used when the compiled
extension is unavailable or when ``MULTITASK_GGM_BACKEND=python``.
"""

import numpy as np

from .model import NormOrder
from .subproblems import (NumericError, SeparableLogarithmic,
                          _solve_lp_quadratic, solve_lp_separable_log)


class KernelStateError(RuntimeError):
    """Cached inverse is no longer consistent with a PD precision matrix."""


def update_variable(omega, sigma, cov, counts, n, rho, p_inf, penalize_diag,
                    screened, newton_iters):
    """Update row/column ``n`` of every precision matrix in place.

    ``sigma`` holds the inverses of ``omega`` and is kept consistent.
    Returns the number of inner solves that needed safeguarded refinement.
    """
    n_tasks, n_feat = omega.shape[0], omega.shape[1]
    norm = NormOrder.PINF if p_inf else NormOrder.P2
    idx = np.r_[0:n, n + 1:n_feat]
    refined = 0

    w_inv = np.empty((n_tasks, n_feat - 1, n_feat - 1))
    y = np.empty((n_tasks, n_feat - 1))
    u = np.empty((n_tasks, n_feat - 1))
    v = np.empty(n_tasks)
    for k in range(n_tasks):
        s = sigma[k, idx, n]
        snn = sigma[k, n, n]
        if not snn > 0.0:
            raise KernelStateError("non-positive pivot in cached inverse")
        w_inv[k] = sigma[k][np.ix_(idx, idx)] - np.outer(s, s) / snn
        y[k] = omega[k, idx, n]
        u[k] = cov[k, idx, n]
        v[k] = cov[k, n, n]
    g = np.einsum("kij,kj->ki", w_inv, y)
    if np.any(np.einsum("kii->ki", w_inv) <= 0.0):
        raise KernelStateError("non-positive diagonal in W inverse")

    if penalize_diag:
        # Optimal diagonal for the current off-diagonal block; its Schur
        # complement sets the curvature of the off-diagonal model.
        b = np.maximum(np.einsum("ki,ki->k", y, g), 0.0)
        prob = SeparableLogarithmic(q=counts, c=counts * v, b=b, rho=rho)
        z, _, fb = solve_lp_separable_log(prob, norm, newton_iters)
        refined += fb
        v_eff = 1.0 / (z - b)
    else:
        v_eff = v

    if not screened[n]:
        for j in range(n_feat - 1):
            if screened[idx[j]]:
                continue
            h22 = w_inv[:, j, j]
            yj = y[:, j]
            q = counts * v_eff * h22
            c = -counts * (v_eff * (g[:, j] - h22 * yj) + u[:, j])
            x, fb = _solve_lp_quadratic(q, c, rho, norm, newton_iters)
            refined += fb
            delta = x - yj
            if np.any(delta != 0.0):
                y[:, j] = x
                g += w_inv[:, :, j] * delta[:, np.newaxis]

    g = np.einsum("kij,kj->ki", w_inv, y)
    b = np.maximum(np.einsum("ki,ki->k", y, g), 0.0)
    if penalize_diag:
        prob = SeparableLogarithmic(q=counts, c=counts * v, b=b, rho=rho)
        z, _, fb = solve_lp_separable_log(prob, norm, newton_iters)
        refined += fb
    else:
        z = 1.0 / v + b
    xi = z - b
    if np.any(xi <= 0.0) or not np.all(np.isfinite(z)):
        raise NumericError("Schur complement is not positive after the "
                           "diagonal update")

    for k in range(n_tasks):
        omega[k, idx, n] = y[k]
        omega[k, n, idx] = y[k]
        omega[k, n, n] = z[k]
        gk = g[k] / xi[k]
        sigma[k][np.ix_(idx, idx)] = w_inv[k] + np.outer(g[k], gk)
        sigma[k, idx, n] = -gk
        sigma[k, n, idx] = -gk
        sigma[k, n, n] = 1.0 / xi[k]
    return refined

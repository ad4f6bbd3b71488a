# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False
"""Compiled block update kernel.

Same contract as ``_pykernels.update_variable``; the inner coordinate loop
and all K-dimensional subproblem solvers run without Python overhead.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, isfinite, NAN

from ._pykernels import KernelStateError
from .subproblems import NumericError, RESIDUAL_RTOL, MAX_REFINE_STEPS

cnp.import_array()

cdef double _RTOL = RESIDUAL_RTOL
cdef int _MAX_REFINE = MAX_REFINE_STEPS

# status codes returned by the nogil helpers
cdef enum:
    OK = 0
    BAD_CURVATURE = 1
    NON_FINITE = 2


cdef void _sort_desc(const double* key, int* order, int m) noexcept nogil:
    # stable insertion sort on decreasing key; m is the number of tasks
    cdef int i, j, t
    for i in range(m):
        order[i] = i
    for i in range(1, m):
        t = order[i]
        j = i - 1
        while j >= 0 and key[order[j]] < key[t]:
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = t


# ---------------------------------------------------------------------------
# l_p regularized separable quadratic
# ---------------------------------------------------------------------------

cdef inline void _tr_derivs(const double* q, const double* c, int m,
                            double rho2, double lam, double* d1,
                            double* d2) noexcept nogil:
    cdef double s1 = 0.0, s2 = 0.0, den, cc
    cdef int i
    for i in range(m):
        den = 1.0 + lam * q[i]
        cc = c[i] * c[i]
        s1 += cc / (den * den)
        s2 += cc * q[i] / (den * den * den)
    d1[0] = rho2 - s1
    d2[0] = 2.0 * s2


cdef int _trust_region(const double* q, const double* c, int m, double rho,
                       int iters, double* lam_out,
                       int* refined) noexcept nogil:
    cdef double rho2 = rho * rho
    cdef double lam = 0.0, d1, d2, step, lo, hi, tol, qmin, norm_c = 0.0
    cdef int it, i
    for it in range(iters):
        _tr_derivs(q, c, m, rho2, lam, &d1, &d2)
        if not (isfinite(d1) and isfinite(d2)):
            return NON_FINITE
        if d2 <= 0.0:
            return BAD_CURVATURE
        step = lam - d1 / d2
        if step < 0.0:
            step = 0.0
        if step == lam:
            break
        lam = step
    _tr_derivs(q, c, m, rho2, lam, &d1, &d2)
    tol = _RTOL * rho2
    if fabs(d1) > tol:
        refined[0] += 1
        qmin = q[0]
        for i in range(m):
            norm_c += c[i] * c[i]
            if q[i] < qmin:
                qmin = q[i]
        lo = 0.0
        hi = (sqrt(norm_c) / rho - 1.0) / qmin
        for it in range(_MAX_REFINE):
            _tr_derivs(q, c, m, rho2, lam, &d1, &d2)
            if fabs(d1) <= tol:
                break
            if d1 < 0.0:
                lo = lam
            else:
                hi = lam
            if d2 > 0.0 and isfinite(d2):
                step = lam - d1 / d2
            else:
                step = NAN
            if not (lo < step < hi):
                step = 0.5 * (lo + hi)
            if step == lam:
                break
            lam = step
    if not isfinite(lam):
        return NON_FINITE
    lam_out[0] = lam
    return OK


cdef int _solve_lp_quad(const double* q, const double* c, double* x, int m,
                        double rho, bint p_inf, int iters, double* wq,
                        double* wc, double* wk, int* order, int* pos,
                        int* refined) noexcept nogil:
    cdef int i, j, nnz = 0, status
    cdef double s = 0.0, sum_a, sum_q, nu, nxt, lam, g, a
    for i in range(m):
        x[i] = 0.0
        if c[i] != 0.0:
            wq[nnz] = q[i]
            wc[nnz] = c[i]
            pos[nnz] = i
            nnz += 1
    if nnz == 0:
        return OK
    if p_inf:
        for j in range(nnz):
            s += fabs(wc[j])
        if s <= rho:
            return OK
        for j in range(nnz):
            wk[j] = fabs(wc[j]) / wq[j]
        _sort_desc(wk, order, nnz)
        sum_a = 0.0
        sum_q = 0.0
        nu = 0.0
        for j in range(nnz):
            sum_a += fabs(wc[order[j]])
            sum_q += wq[order[j]]
            nu = (sum_a - rho) / sum_q
            nxt = wk[order[j + 1]] if j + 1 < nnz else 0.0
            if nu >= nxt:
                break
        for j in range(nnz):
            a = fabs(wc[j])
            g = a - nu * wq[j]
            if g < 0.0:
                g = 0.0
            if wc[j] > 0.0:
                x[pos[j]] = (wc[j] - g) / wq[j]
            else:
                x[pos[j]] = (wc[j] + g) / wq[j]
        return OK
    for j in range(nnz):
        s += wc[j] * wc[j]
    if sqrt(s) <= rho:
        return OK
    status = _trust_region(wq, wc, nnz, rho, iters, &lam, refined)
    if status != OK:
        return status
    for j in range(nnz):
        x[pos[j]] = lam * wc[j] / (1.0 + lam * wq[j])
    return OK


# ---------------------------------------------------------------------------
# l_p regularized separable logarithmic (penalized diagonal)
# ---------------------------------------------------------------------------

cdef inline void _lk_derivs(const double* q, const double* c, const double* b,
                            const int* order, int active, double rho,
                            double nu, double* d1, double* d2) noexcept nogil:
    cdef double s1 = 0.0, s2 = 0.0, t
    cdef int j, i
    for j in range(active):
        i = order[j]
        t = nu - b[i]
        s1 += q[i] / t - c[i]
        s2 += q[i] / (t * t)
    d1[0] = rho - s1
    d2[0] = s2


cdef int _log_knapsack(const double* q, const double* c, const double* b,
                       double* r, int m, double rho, int iters, double* wk,
                       int* order, int* refined) noexcept nogil:
    cdef double b_max = b[0], nxt, s, upper, lower, eps, nu, d1, d2, step
    cdef double lo, hi, tol, val
    cdef int i, j, active = m, it
    cdef bint open_lower
    for i in range(m):
        if b[i] > b_max:
            b_max = b[i]
        wk[i] = q[i] / c[i] + b[i]
    _sort_desc(wk, order, m)
    for i in range(m):
        nxt = wk[order[i + 1]] if i + 1 < m else 0.0
        if nxt <= b_max:
            active = i + 1
            break
        s = 0.0
        for j in range(i + 1):
            s += q[order[j]] / (nxt - b[order[j]]) - c[order[j]]
        if s >= rho:
            active = i + 1
            break
    upper = wk[order[active - 1]]
    nxt = wk[order[active]] if active < m else 0.0
    if nxt > b_max:
        lower = nxt
        open_lower = False
    else:
        lower = b_max
        open_lower = True
    eps = 1e-6 * (1.0 + b_max)
    nu = b_max + eps
    if upper > nu:
        nu = upper
    if nu > upper:
        nu = 0.5 * (lower + upper)
    for it in range(iters):
        _lk_derivs(q, c, b, order, active, rho, nu, &d1, &d2)
        if not (isfinite(d1) and isfinite(d2)):
            return NON_FINITE
        if d2 <= 0.0:
            return BAD_CURVATURE
        step = nu - d1 / d2
        if step < lower or (open_lower and step <= lower):
            if open_lower:
                step = 0.5 * (nu + lower)
            else:
                step = lower
        if step > upper:
            step = upper
        if step == nu:
            break
        nu = step
    _lk_derivs(q, c, b, order, active, rho, nu, &d1, &d2)
    tol = _RTOL * rho
    if fabs(d1) > tol:
        refined[0] += 1
        lo = lower
        hi = upper
        for it in range(_MAX_REFINE):
            _lk_derivs(q, c, b, order, active, rho, nu, &d1, &d2)
            if fabs(d1) <= tol:
                break
            if d1 < 0.0:
                lo = nu
            else:
                hi = nu
            if d2 > 0.0 and isfinite(d2):
                step = nu - d1 / d2
            else:
                step = NAN
            if not (lo < step < hi):
                step = 0.5 * (lo + hi)
            if step == nu:
                break
            nu = step
    if not isfinite(nu) or nu <= b_max:
        return NON_FINITE
    for i in range(m):
        r[i] = 0.0
    for j in range(active):
        i = order[j]
        val = q[i] / (nu - b[i]) - c[i]
        r[i] = val if val > 0.0 else 0.0
    return OK


cdef inline double _ltr_r(double q, double c, double b, double lam,
                          double* disc_out) noexcept nogil:
    cdef double disc = sqrt((b + lam * c) * (b + lam * c) + 4.0 * lam * q)
    cdef double t = lam * c - b
    disc_out[0] = disc
    if t >= 0.0:
        return 2.0 * (q + b * c) / (disc + t)
    return (disc - t) / (2.0 * lam)


cdef inline void _ltr_derivs(const double* q, const double* c, const double* b,
                             int m, double rho2, double lam, double* r,
                             double* d1, double* d2) noexcept nogil:
    cdef double s1 = 0.0, s2 = 0.0, disc, ri
    cdef int i
    for i in range(m):
        ri = _ltr_r(q[i], c[i], b[i], lam, &disc)
        r[i] = ri
        s1 += ri * ri
        s2 += ri * (ri * ri + c[i] * ri) / disc
    d1[0] = 0.5 * (rho2 - s1)
    d2[0] = s2


cdef inline double _single_lambda(double q, double c, double b,
                                  double radius) noexcept nogil:
    return (q + b * (c + radius)) / (radius * (c + radius))


cdef int _log_trust_region(const double* q, const double* c, const double* b,
                           double* r, int m, double rho, int iters,
                           int* refined) noexcept nogil:
    cdef double rho2 = rho * rho, lo, hi, lam = 0.0, val, d1, d2, step, tol
    cdef double small = rho / sqrt(<double> m)
    cdef int i, it
    lo = _single_lambda(q[0], c[0], b[0], rho)
    hi = _single_lambda(q[0], c[0], b[0], small)
    for i in range(m):
        val = _single_lambda(q[i], c[i], b[i], rho)
        lam += val
        if val < lo:
            lo = val
        val = _single_lambda(q[i], c[i], b[i], small)
        if val > hi:
            hi = val
    lam /= m
    for it in range(iters):
        _ltr_derivs(q, c, b, m, rho2, lam, r, &d1, &d2)
        if not (isfinite(d1) and isfinite(d2)):
            return NON_FINITE
        if d2 <= 0.0:
            return BAD_CURVATURE
        step = lam - d1 / d2
        if step < lo:
            step = lo
        if step > hi:
            step = hi
        if step == lam:
            break
        lam = step
    _ltr_derivs(q, c, b, m, rho2, lam, r, &d1, &d2)
    tol = _RTOL * rho2
    if fabs(d1) > tol:
        refined[0] += 1
        for it in range(_MAX_REFINE):
            _ltr_derivs(q, c, b, m, rho2, lam, r, &d1, &d2)
            if fabs(d1) <= tol:
                break
            if d1 < 0.0:
                lo = lam
            else:
                hi = lam
            if d2 > 0.0 and isfinite(d2):
                step = lam - d1 / d2
            else:
                step = NAN
            if not (lo < step < hi):
                step = 0.5 * (lo + hi)
            if step == lam:
                break
            lam = step
        _ltr_derivs(q, c, b, m, rho2, lam, r, &d1, &d2)
    if not isfinite(lam):
        return NON_FINITE
    return OK


cdef int _diagonal(const double* counts, const double* v, const double* b,
                   double* z, int m, double rho, bint p_inf,
                   bint penalize_diag, int iters, double* wq, double* wc,
                   double* wr, double* wk, int* order,
                   int* refined) noexcept nogil:
    cdef int i, status
    if not penalize_diag:
        for i in range(m):
            z[i] = 1.0 / v[i] + b[i]
        return OK
    for i in range(m):
        wq[i] = counts[i]
        wc[i] = counts[i] * v[i]
    if p_inf:
        status = _log_knapsack(wq, wc, b, wr, m, rho, iters, wk, order,
                               refined)
    else:
        status = _log_trust_region(wq, wc, b, wr, m, rho, iters, refined)
    if status != OK:
        return status
    for i in range(m):
        z[i] = b[i] + wq[i] / (wc[i] + wr[i])
    return OK


def _raise_status(int status):
    if status == BAD_CURVATURE:
        raise NumericError("non-positive curvature in an inner Newton solve")
    raise NumericError("non-finite iterate in an inner solve")


def update_variable(double[:, :, ::1] omega, double[:, :, ::1] sigma,
                    const double[:, :, ::1] cov, const double[::1] counts,
                    Py_ssize_t n, double rho, bint p_inf, bint penalize_diag,
                    const unsigned char[::1] screened, int newton_iters):
    """Update row/column ``n`` of every precision matrix in place.

    Returns the number of inner solves that needed safeguarded refinement.
    """
    cdef Py_ssize_t n_tasks = omega.shape[0], n_feat = omega.shape[1]
    cdef Py_ssize_t m = n_feat - 1
    cdef Py_ssize_t k, i, j, a, bb, ia, ib
    cdef int refined = 0, status
    cdef double snn, h22, d, xi

    w_inv_arr = np.empty((n_tasks, m, m))
    cdef double[:, :, ::1] w_inv = w_inv_arr
    cdef double[:, ::1] y = np.empty((n_tasks, m))
    cdef double[:, ::1] u = np.empty((n_tasks, m))
    cdef double[:, ::1] g = np.zeros((n_tasks, m))
    cdef Py_ssize_t[::1] idx = np.empty(m, dtype=np.intp)
    cdef double[::1] v = np.empty(n_tasks)
    cdef double[::1] v_eff = np.empty(n_tasks)
    cdef double[::1] bvec = np.empty(n_tasks)
    cdef double[::1] z = np.empty(n_tasks)
    cdef double[::1] q = np.empty(n_tasks)
    cdef double[::1] c = np.empty(n_tasks)
    cdef double[::1] x = np.empty(n_tasks)
    cdef double[::1] wq = np.empty(n_tasks)
    cdef double[::1] wc = np.empty(n_tasks)
    cdef double[::1] wk = np.empty(n_tasks)
    cdef double[::1] wr = np.empty(n_tasks)
    cdef int[::1] order = np.empty(n_tasks, dtype=np.intc)
    cdef int[::1] pos = np.empty(n_tasks, dtype=np.intc)

    j = 0
    for i in range(n_feat):
        if i != n:
            idx[j] = i
            j += 1

    for k in range(n_tasks):
        snn = sigma[k, n, n]
        if not snn > 0.0:
            raise KernelStateError("non-positive pivot in cached inverse")
        for a in range(m):
            ia = idx[a]
            for bb in range(m):
                ib = idx[bb]
                w_inv[k, a, bb] = (sigma[k, ia, ib]
                                   - sigma[k, ia, n] * sigma[k, ib, n] / snn)
            if not w_inv[k, a, a] > 0.0:
                raise KernelStateError("non-positive diagonal in W inverse")
            y[k, a] = omega[k, ia, n]
            u[k, a] = cov[k, ia, n]
        v[k] = cov[k, n, n]

    with nogil:
        for k in range(n_tasks):
            for a in range(m):
                d = 0.0
                for bb in range(m):
                    d = d + w_inv[k, a, bb] * y[k, bb]
                g[k, a] = d
        if penalize_diag:
            for k in range(n_tasks):
                d = 0.0
                for a in range(m):
                    d = d + y[k, a] * g[k, a]
                bvec[k] = d if d > 0.0 else 0.0
            status = _diagonal(&counts[0], &v[0], &bvec[0], &z[0],
                               <int> n_tasks, rho, p_inf, True, newton_iters,
                               &wq[0], &wc[0], &wr[0], &wk[0], &order[0],
                               &refined)
            if status == OK:
                for k in range(n_tasks):
                    v_eff[k] = 1.0 / (z[k] - bvec[k])
        else:
            status = OK
            for k in range(n_tasks):
                v_eff[k] = v[k]

        if status == OK and not screened[n]:
            for j in range(m):
                if screened[idx[j]]:
                    continue
                for k in range(n_tasks):
                    h22 = w_inv[k, j, j]
                    q[k] = counts[k] * v_eff[k] * h22
                    c[k] = -counts[k] * (v_eff[k] * (g[k, j] - h22 * y[k, j])
                                         + u[k, j])
                status = _solve_lp_quad(&q[0], &c[0], &x[0], <int> n_tasks,
                                        rho, p_inf, newton_iters, &wq[0],
                                        &wc[0], &wk[0], &order[0], &pos[0],
                                        &refined)
                if status != OK:
                    break
                for k in range(n_tasks):
                    d = x[k] - y[k, j]
                    if d != 0.0:
                        y[k, j] = x[k]
                        for a in range(m):
                            g[k, a] = g[k, a] + w_inv[k, a, j] * d

        if status == OK:
            for k in range(n_tasks):
                for a in range(m):
                    d = 0.0
                    for bb in range(m):
                        d = d + w_inv[k, a, bb] * y[k, bb]
                    g[k, a] = d
                d = 0.0
                for a in range(m):
                    d = d + y[k, a] * g[k, a]
                bvec[k] = d if d > 0.0 else 0.0
            status = _diagonal(&counts[0], &v[0], &bvec[0], &z[0],
                               <int> n_tasks, rho, p_inf, penalize_diag,
                               newton_iters, &wq[0], &wc[0], &wr[0], &wk[0],
                               &order[0], &refined)
    if status != OK:
        _raise_status(status)

    for k in range(n_tasks):
        xi = z[k] - bvec[k]
        if not (xi > 0.0 and isfinite(z[k])):
            raise NumericError("Schur complement is not positive after the "
                               "diagonal update")

    with nogil:
        for k in range(n_tasks):
            xi = z[k] - bvec[k]
            for a in range(m):
                ia = idx[a]
                omega[k, ia, n] = y[k, a]
                omega[k, n, ia] = y[k, a]
            omega[k, n, n] = z[k]
            for a in range(m):
                ia = idx[a]
                for bb in range(m):
                    ib = idx[bb]
                    sigma[k, ia, ib] = (w_inv[k, a, bb]
                                        + g[k, a] * g[k, bb] / xi)
                sigma[k, ia, n] = -g[k, a] / xi
                sigma[k, n, ia] = -g[k, a] / xi
            sigma[k, n, n] = 1.0 / xi
    return refined

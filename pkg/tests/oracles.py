"""Independent reference solvers used as test oracles.

None of these share code with the package's inner solvers: they are
generic proximal-gradient methods and bisection searches.
"""

import numpy as np


def project_l1_ball(v, radius):
    """Euclidean projection of each row of ``v`` onto an l1 ball.

    ``radius`` is a scalar or one radius per row.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (len(v),))
    a = np.abs(v)
    mu = -np.sort(-a, axis=1)
    css = np.cumsum(mu, axis=1)
    ks = np.arange(1, v.shape[1] + 1)
    cond = mu - (css - radius[:, None]) / ks > 0
    last = v.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = (css[np.arange(len(v)), last] - radius) / (last + 1)
    shrunk = np.sign(v) * np.maximum(a - theta[:, None], 0.0)
    inside = a.sum(axis=1) <= radius
    return np.where(inside[:, None], v, shrunk)


def prox_lp(v, t, p):
    """Prox of ``t * ||.||_p`` on every row of ``v`` (p in {2, inf}).

    ``t`` is a scalar or one weight per row.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(v),))
    if p == 2:
        norm = np.linalg.norm(v, axis=1)
        scale = np.maximum(0.0, 1.0 - t / np.maximum(norm, 1e-300))
        return v * scale[:, None]
    # Moreau: prox of the inf-norm is the residual of the l1-ball projection.
    return v - project_l1_ball(v, t)


def separable_objective(x, q, c, rho, p):
    x = np.atleast_2d(x)
    order = 2 if p == 2 else np.inf
    return (0.5 * np.sum(q * x * x, axis=1) - np.sum(c * x, axis=1)
            + rho * np.linalg.norm(x, ord=order, axis=1))


def separable_quadratic_oracle(q, c, rho, p, iters=20000, tol=1e-15):
    """Batched FISTA with gradient restart on ``1/2 x'Qx - c'x + rho||x||_p``.

    Rows of ``q``, ``c`` are independent instances (equal length), ``rho`` a
    vector of per-row levels.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    rho = np.asarray(rho, dtype=float).reshape(-1, 1)
    step = 1.0 / q.max(axis=1, keepdims=True)
    x = np.zeros_like(c)
    yv = x.copy()
    t = np.ones((len(q), 1))
    for _ in range(iters):
        x_new = prox_lp(yv - step * (q * yv - c), (step * rho).ravel(), p)
        restart = np.sum((yv - x_new) * (x_new - x), axis=1) > 0
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        t_new[restart] = 1.0
        mom = (t - 1.0) / t_new
        mom[restart] = 0.0
        yv = x_new + mom * (x_new - x)
        done = np.max(np.abs(x_new - x)) <= tol
        x, t = x_new, t_new
        if done:
            break
    return x


def separable_quadratic_grid(q, c, rho, p, half_width=6.0, n=241, rounds=6):
    """Coarse-to-fine grid search for K <= 2 (brute-force cross-check)."""
    q = np.asarray(q, float)
    c = np.asarray(c, float)
    k = len(q)
    center = np.zeros(k)
    width = half_width
    for _ in range(rounds):
        axes = [np.linspace(m - width, m + width, n) for m in center]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, k)
        vals = separable_objective(mesh, q, c, rho, p)
        center = mesh[np.argmin(vals)]
        width *= 4.0 / (n - 1) * 2
    return center


def bisect(f, lo, hi, tol=1e-14, iters=400):
    """Root of an increasing function on ``[lo, hi]``."""
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


def trust_region_lambda_oracle(q, c, rho):
    """Root of ``||c / (1 + lam q)||_2 = rho`` by bisection."""
    q = np.asarray(q, float)
    c = np.asarray(c, float)
    if np.linalg.norm(c) <= rho:
        return 0.0
    hi = 1.0
    while np.linalg.norm(c / (1 + hi * q)) > rho:
        hi *= 2.0
    return bisect(lambda lam: rho - np.linalg.norm(c / (1 + lam * q)), 0.0, hi)


def log_objective(r, q, c, b):
    """``-sum q ln(r + c) - b'r`` (minimized over the constraint set)."""
    r = np.atleast_2d(r)
    return -(np.sum(q * np.log(r + c), axis=1) + np.sum(b * r, axis=1))


def log_knapsack_oracle(q, c, b, rho):
    """KKT by bisection on nu.

    ``r_k = max(0, q_k/(nu - b_k) - c_k)`` must sum to rho.
    """
    q, c, b = (np.asarray(a, float) for a in (q, c, b))

    def r_of(nu):
        return np.maximum(0.0, q / (nu - b) - c)

    lo = b.max() * (1 + 1e-15) + 1e-300
    hi = b.max() + q.max() / c.min() + 1.0
    while r_of(lo).sum() < rho:
        lo = b.max() + 0.5 * (lo - b.max())
    nu = bisect(lambda v: rho - r_of(v).sum(), lo, hi)
    return r_of(nu), nu


def log_trust_region_oracle(q, c, b, rho, iters=200000):
    """Projected gradient on ``-sum q ln(r + c) - b'r``, ``||r||_2 <= rho``.

    The feasible set keeps ``r + c >= c - rho``; callers pick data with
    ``c > rho`` or accept the projected domain ``r >= 0`` implied by the
    sign structure (gradient pushes r upward).
    """
    q, c, b = (np.asarray(a, float) for a in (q, c, b))
    r = np.zeros_like(q)
    step = 0.5 * np.min(c * c / q)
    for _ in range(iters):
        grad = -(q / (r + c)) - b
        r_new = np.maximum(r - step * grad, 0.0)
        nrm = np.linalg.norm(r_new)
        if nrm > rho:
            r_new *= rho / nrm
        if np.max(np.abs(r_new - r)) < 1e-16:
            r = r_new
            break
        r = r_new
    return r


# -- full multi-task objective ------------------------------------------------


def _logdet_or_none(m):
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return None
    return 2.0 * np.sum(np.log(np.diag(chol)))


def _smooth(covs, counts, omega):
    """Negated likelihood part; ``None`` outside the PD cone."""
    total = 0.0
    for s, t, w in zip(covs, counts, omega):
        ld = _logdet_or_none(w)
        if ld is None:
            return None
        total += t * (np.sum(s * w) - ld)
    return total


def _regularizer(omega, p, penalize_diagonal):
    order = 2 if p == 2 else np.inf
    per = np.linalg.norm(omega, ord=order, axis=0)
    if not penalize_diagonal:
        per = per - np.diag(np.diag(per))
    return np.sum(per)


def _prox_positions(omega, t, p, penalize_diagonal):
    k, n, _ = omega.shape
    flat = omega.reshape(k, n * n).T
    shrunk = prox_lp(flat, t, p)
    if not penalize_diagonal:
        diag = np.arange(n) * (n + 1)
        shrunk[diag] = flat[diag]
    return shrunk.T.reshape(k, n, n)


def reference_solve(covs, counts, rho, p, penalize_diagonal,
                    max_iter=200000, tol=1e-13):
    """Accelerated proximal gradient with backtracking on the full objective.

    Works on ``-sum_k T_k (logdet W_k - <S_k, W_k>) + rho R(W)`` over all
    matrix entries jointly; iterates are symmetric because the gradient and
    the position-wise prox both are. Returns ``(omega, objective)`` with the
    objective in the package's maximization convention.
    """
    covs = np.asarray(covs, float)
    counts = np.asarray(counts, float)
    k, n, _ = covs.shape
    omega = np.stack([np.diag(1.0 / np.diag(s)) for s in covs])

    def full(w):
        f = _smooth(covs, counts, w)
        return None if f is None else f + rho * _regularizer(
            w, p, penalize_diagonal)

    def grad(w):
        return np.stack([t * (s - np.linalg.inv(m))
                         for s, t, m in zip(covs, counts, w)])

    x = omega
    y = x.copy()
    theta = 1.0
    lip = 1.0
    f_x = full(x)
    for it in range(max_iter):
        f_y = _smooth(covs, counts, y)
        if f_y is None:
            y = x.copy()
            theta = 1.0
            f_y = _smooth(covs, counts, y)
        g = grad(y)
        while True:
            step = 1.0 / lip
            cand = _prox_positions(y - step * g, rho * step, p,
                                   penalize_diagonal)
            cand = 0.5 * (cand + cand.transpose(0, 2, 1))
            f_c = _smooth(covs, counts, cand)
            d = cand - y
            model = (f_y + np.sum(g * d) + 0.5 * lip * np.sum(d * d)
                     + 1e-15 * abs(f_y))
            if f_c is not None and f_c <= model:
                break
            lip *= 2.0
        f_new = f_c + rho * _regularizer(cand, p, penalize_diagonal)
        if f_new > f_x:
            if theta == 1.0 and np.array_equal(y, x):
                break
            # Restart: take a plain proximal step from x instead.
            y = x.copy()
            theta = 1.0
            continue
        theta_new = 0.5 * (1 + np.sqrt(1 + 4 * theta * theta))
        y = cand + ((theta - 1) / theta_new) * (cand - x)
        change = abs(f_x - f_new)
        x, f_x, theta = cand, f_new, theta_new
        lip = max(lip * 0.9, 1e-12)
        if change <= tol * max(1.0, abs(f_x)) and it > 10:
            break
    return x, -f_x

"""
Inner loops shared by the solvers and the bandit simulator.

Each kernel has a numba implementation (``*_jit``) and a numpy one
(``*_np``). The public names dispatch on :func:`molarkit._accel.use_jit`,
so the choice can be flipped at runtime for benchmarking.
"""
import numpy as np

from ._accel import njit, use_jit


# --------------------------------------------------------------------------
# Lasso coordinate descent on precomputed Gram quantities
#
# Minimizes 0.5 * t'Gt - q't + lam * |t|_1, i.e. the usual
# (1/2n)|y - Xt|^2 + lam |t|_1 with G = X'X/n and q = X'y/n.
# --------------------------------------------------------------------------

@njit(cache=True)
def _lasso_cd_jit(G, q, lam, theta0, tol, max_iter):
    d = q.shape[0]
    theta = theta0.copy()
    Gt = G @ theta
    history = np.empty(max_iter + 1)
    obj = 0.5 * theta @ Gt - q @ theta + lam * np.sum(np.abs(theta))
    history[0] = obj
    converged = False
    sweeps = 0
    for it in range(max_iter):
        max_change = 0.0
        for k in range(d):
            gkk = G[k, k]
            old = theta[k]
            if gkk <= 0.0:
                new = 0.0
            else:
                rho = q[k] - Gt[k] + gkk * old
                if rho > lam:
                    new = (rho - lam) / gkk
                elif rho < -lam:
                    new = (rho + lam) / gkk
                else:
                    new = 0.0
            delta = new - old
            if delta != 0.0:
                theta[k] = new
                for j in range(d):
                    Gt[j] += G[j, k] * delta
                if abs(delta) > max_change:
                    max_change = abs(delta)
        sweeps = it + 1
        history[sweeps] = 0.5 * theta @ Gt - q @ theta + lam * np.sum(np.abs(theta))
        if max_change < tol:
            converged = True
            break
    return theta, sweeps, converged, history[: sweeps + 1]


def _lasso_cd_np(G, q, lam, theta0, tol, max_iter):
    d = q.shape[0]
    theta = theta0.astype(float).copy()
    Gt = G @ theta
    diag = np.diag(G).copy()
    history = [0.5 * theta @ Gt - q @ theta + lam * np.abs(theta).sum()]
    converged = False
    sweeps = 0
    for it in range(max_iter):
        max_change = 0.0
        for k in range(d):
            old = theta[k]
            if diag[k] <= 0.0:
                new = 0.0
            else:
                rho = q[k] - Gt[k] + diag[k] * old
                new = np.sign(rho) * max(abs(rho) - lam, 0.0) / diag[k]
            delta = new - old
            if delta != 0.0:
                theta[k] = new
                Gt += G[:, k] * delta
                max_change = max(max_change, abs(delta))
        sweeps = it + 1
        history.append(0.5 * theta @ Gt - q @ theta + lam * np.abs(theta).sum())
        if max_change < tol:
            converged = True
            break
    return theta, sweeps, converged, np.asarray(history)


def lasso_cd(G, q, lam, theta0, tol, max_iter):
    """Cyclic coordinate descent; returns ``(theta, sweeps, converged, objective_history)``."""
    G = np.ascontiguousarray(G, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    theta0 = np.ascontiguousarray(theta0, dtype=np.float64)
    fn = _lasso_cd_jit if use_jit() else _lasso_cd_np
    return fn(G, q, float(lam), theta0, float(tol), int(max_iter))


# --------------------------------------------------------------------------
# Greedy arm choice with uniform tie-breaking
# --------------------------------------------------------------------------

@njit(cache=True)
def _greedy_choice_jit(scores, u):
    m_count, k_count = scores.shape
    arms = np.empty(m_count, dtype=np.int64)
    for m in range(m_count):
        best = scores[m, 0]
        for a in range(1, k_count):
            if scores[m, a] > best:
                best = scores[m, a]
        n_ties = 0
        for a in range(k_count):
            if scores[m, a] == best:
                n_ties += 1
        pick = int(u[m] * n_ties)
        if pick >= n_ties:
            pick = n_ties - 1
        seen = 0
        for a in range(k_count):
            if scores[m, a] == best:
                if seen == pick:
                    arms[m] = a
                    break
                seen += 1
    return arms


def _greedy_choice_np(scores, u):
    is_best = scores == scores.max(axis=1, keepdims=True)
    n_ties = is_best.sum(axis=1)
    pick = np.minimum((u * n_ties).astype(np.int64), n_ties - 1)
    # position of the pick-th True in each row
    rank = np.cumsum(is_best, axis=1) - 1
    hit = is_best & (rank == pick[:, None])
    return hit.argmax(axis=1).astype(np.int64)


def greedy_choice(scores, u):
    """Row-wise argmax of ``scores``; exact ties resolved by the uniforms ``u``.

    Every row consumes exactly one uniform whether or not it has a tie,
    so the draw count does not depend on the estimates.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if scores.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    fn = _greedy_choice_jit if use_jit() else _greedy_choice_np
    return fn(scores, u)


# --------------------------------------------------------------------------
# Over-relaxed ADMM for  min |z[pen]|_1  s.t.  B z = c
#
# ``BtK`` = B' (B B')^{-1} is precomputed so the affine projection is
# w - BtK (B w - c). Entries of z with pen_mask == 0 are unpenalized.
# --------------------------------------------------------------------------

@njit(cache=True)
def _admm_l1_jit(B, BtK, c, pen_mask, z0, u0, rho, alpha, tol, max_iter):
    z = z0.copy()
    u = u0.copy()
    x = z.copy()
    thr = 1.0 / rho
    n = z.shape[0]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = z - u
        x = w - BtK @ (B @ w - c)
        z_old = z.copy()
        for i in range(n):
            xh = alpha * x[i] + (1.0 - alpha) * z_old[i]
            v = xh + u[i]
            if pen_mask[i]:
                if v > thr:
                    zi = v - thr
                elif v < -thr:
                    zi = v + thr
                else:
                    zi = 0.0
            else:
                zi = v
            z[i] = zi
            u[i] = v - zi
        r = 0.0
        s = 0.0
        for i in range(n):
            r = max(r, abs(x[i] - z[i]))
            s = max(s, abs(z[i] - z_old[i]))
        if r < tol and rho * s < tol:
            converged = True
            break
    return x, z, u, it, converged


def _admm_l1_np(B, BtK, c, pen_mask, z0, u0, rho, alpha, tol, max_iter):
    z = z0.copy()
    u = u0.copy()
    x = z.copy()
    thr = 1.0 / rho
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = z - u
        x = w - BtK @ (B @ w - c)
        z_old = z
        v = alpha * x + (1.0 - alpha) * z_old + u
        z = np.where(pen_mask, np.sign(v) * np.maximum(np.abs(v) - thr, 0.0), v)
        u = v - z
        r = np.max(np.abs(x - z))
        s = np.max(np.abs(z - z_old))
        if r < tol and rho * s < tol:
            converged = True
            break
    return x, z, u, it, converged


def admm_l1(B, BtK, c, pen_mask, z0, u0, rho, alpha, tol, max_iter):
    """Run the ADMM loop; returns ``(x, z, u, iterations, converged)``."""
    args = (
        np.ascontiguousarray(B, dtype=np.float64),
        np.ascontiguousarray(BtK, dtype=np.float64),
        np.ascontiguousarray(c, dtype=np.float64),
        np.ascontiguousarray(pen_mask, dtype=np.bool_),
        np.ascontiguousarray(z0, dtype=np.float64),
        np.ascontiguousarray(u0, dtype=np.float64),
        float(rho),
        float(alpha),
        float(tol),
        int(max_iter),
    )
    fn = _admm_l1_jit if use_jit() else _admm_l1_np
    return fn(*args)

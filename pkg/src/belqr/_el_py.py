"""Pure numpy EL kernel. Mirrors ``_el_kernel.pyx`` operation for operation."""
import numpy as np

CONVERGED = 0
INFEASIBLE = 1
MAXITER = 2
SINGULAR = 3

MAX_ITER = 50
MAX_HALVINGS = 60
GRAD_TOL = 1e-10
SUM_TOL = 1e-10
SUM_GIVE_UP = 1e-6
CONSTRAINT_TOL = 1e-8
ARMIJO = 1e-4
# below this Newton decrement (relative to |f|) the objective cannot resolve
# the improvement, so the full step is taken without a line search
FLAT_DECREMENT = 1e-12


def estimating_functions(y, X, betas, taus):
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    betas = np.asarray(betas, dtype=float)
    n, p1 = X.shape
    k = len(taus)
    out = np.empty((n, k * p1))
    for d in range(k):
        acc = np.zeros(n)
        for j in range(p1):
            acc = acc + X[:, j] * betas[d, j]
        r = y - acc
        s = np.where(r < 0, 1.0 - taus[d], -taus[d])
        s[r == 0] = 0.0
        out[:, d * p1:(d + 1) * p1] = s[:, None] * X
    return out


def _log_star(s, eps):
    # argument is z - 1: log1p keeps repeated rows from stacking rounding error
    z = 1.0 + s
    low = z < eps
    out = np.log1p(np.where(low, eps - 1.0, s))
    if low.any():
        zz = z[low]
        out[low] = np.log(eps) - 1.5 + 2.0 * zz / eps - zz * zz / (2.0 * eps * eps)
    return out


def _cholesky(P):
    m = P.shape[0]
    L = np.zeros_like(P)
    scale = max(float(np.max(np.diag(P))), 0.0)
    if scale <= 0.0:
        return None
    for a in range(m):
        s = P[a, a] - L[a, :a] @ L[a, :a]
        if s <= 1e-14 * scale:
            return None
        L[a, a] = np.sqrt(s)
        for b in range(a + 1, m):
            L[b, a] = (P[b, a] - L[b, :a] @ L[a, :a]) / L[a, a]
    return L


def _chol_solve(L, g):
    m = L.shape[0]
    v = np.zeros(m)
    for a in range(m):
        v[a] = (g[a] - L[a, :a] @ v[:a]) / L[a, a]
    x = np.zeros(m)
    for a in range(m - 1, -1, -1):
        x[a] = (v[a] - L[a + 1:, a] @ x[a + 1:]) / L[a, a]
    return x


def solve_dual(M):
    """Maximize ``sum log*(1 + lam'M_i)`` by damped Newton.

    Returns ``(lam, z, log_ratio, status, iterations)`` where
    ``z = 1 + M @ lam``.
    """
    M = np.asarray(M, dtype=float)
    n, m = M.shape
    lam = np.zeros(m)
    z = np.ones(n)
    s = np.zeros(n)
    if np.any(np.all(M > 0, axis=0)) or np.any(np.all(M < 0, axis=0)):
        return lam, z, -np.inf, INFEASIBLE, 0
    eps = 1.0 / n
    gtol = GRAD_TOL * n * np.max(np.abs(M))
    f = 0.0
    status = MAXITER
    it = 0
    gmax = np.inf
    for it in range(1, MAX_ITER + 1):
        low = z < eps
        d1 = np.where(low, 2.0 / eps - z / (eps * eps), 1.0 / np.where(low, 1.0, z))
        d2 = np.where(low, 1.0 / (eps * eps), d1 * d1)
        g = M.T @ d1
        gmax = np.max(np.abs(g))
        if gmax <= gtol:
            sum_w = np.sum(1.0 / (n * z))
            if abs(sum_w - 1.0) <= SUM_TOL:
                status = CONVERGED
                break
            if abs(sum_w - 1.0) > SUM_GIVE_UP:
                status = INFEASIBLE
                break
        P = (M * d2[:, None]).T @ M
        L = _cholesky(P)
        if L is None:
            status = SINGULAR if it == 1 else INFEASIBLE
            break
        step = _chol_solve(L, g)
        slope = g @ step
        t = 1.0
        accepted = False
        for _ in range(1 if slope <= FLAT_DECREMENT * (1.0 + abs(f)) else MAX_HALVINGS):
            lam_t = lam + t * step
            s_t = M @ lam_t
            z_t = 1.0 + s_t
            f_t = np.sum(_log_star(s_t, eps))
            if f_t >= f + ARMIJO * t * slope or slope <= FLAT_DECREMENT * (1.0 + abs(f)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            status = INFEASIBLE if gmax <= gtol else MAXITER
            break
        lam, z, s, f = lam_t, z_t, s_t, f_t
    if status == CONVERGED:
        w = 1.0 / (n * z)
        if np.min(z) <= 0.5 * eps or np.max(np.abs(w @ M)) > CONSTRAINT_TOL:
            status = INFEASIBLE
    if status != CONVERGED:
        return lam, z, -np.inf, status, it
    return lam, z, -float(np.sum(np.log1p(s))), status, it


class Workspace:
    """Reusable evaluator for the MCMC hot path."""

    def __init__(self, y, X, taus):
        self.y = np.ascontiguousarray(y, dtype=float)
        self.X = np.ascontiguousarray(X, dtype=float)
        self.taus = np.ascontiguousarray(taus, dtype=float)

    def log_ratio(self, betas):
        M = estimating_functions(self.y, self.X, betas, self.taus)
        _, _, log_ratio, status, _ = solve_dual(M)
        return log_ratio, status

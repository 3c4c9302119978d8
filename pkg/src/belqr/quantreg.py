"""Linear quantile regression by a primal-dual interior-point LP solver.

Regression quantiles solve ``min_b sum_r rho_{tau_r}(y_r - x_r'b)``. The
solver works on the bounded dual

    max y'a  s.t.  X'a = X'(1 - tau),  0 <= a <= 1,

with Mehrotra predictor-corrector steps, then snaps to an exact basic
solution (``p + 1`` interpolated observations).
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import ContractError, Dataset, Parameterization, as_levels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitResult:
    """Coefficients per level (``k x (p+1)``), total check loss and status."""

    beta: np.ndarray
    objective: float
    status: str
    taus: np.ndarray
    theta: np.ndarray | None = None

    @property
    def coef(self) -> np.ndarray:
        return self.beta[0] if self.beta.shape[0] == 1 else self.beta


def _bounded_lp(A, b, c, x0, tol=1e-12, max_iter=100):
    """Solve ``min c'x  s.t.  Ax = b, 0 <= x <= 1`` from interior ``x0``.

    Returns ``(x, lam, iterations, converged)`` where ``lam`` is the
    multiplier of the equality constraints.
    """
    m, N = A.shape
    x = x0.copy()
    s = 1.0 - x
    lam = np.linalg.lstsq(A.T, c, rcond=None)[0]
    r = c - A.T @ lam
    delta = max(1e-2, 0.1 * np.mean(np.abs(r)))
    z = np.maximum(r, 0.0) + delta
    w = np.maximum(-r, 0.0) + delta
    scale = 1.0 + np.abs(c).max()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        rb = b - A @ x
        rc = c - A.T @ lam - z + w
        gap = x @ z + s @ w
        if gap <= tol * scale * N and np.abs(rc).max() <= 1e-9 * scale and np.abs(rb).max() <= 1e-9 * (1 + np.abs(b).max()):
            converged = True
            break
        mu = gap / (2 * N)
        D = 1.0 / (z / x + w / s)
        ADA = (A * D) @ A.T
        try:
            factor = scipy.linalg.cho_factor(ADA, check_finite=False)
            solve = lambda rhs: scipy.linalg.cho_solve(factor, rhs, check_finite=False)  # noqa: E731
        except np.linalg.LinAlgError:
            solve = lambda rhs: np.linalg.lstsq(ADA, rhs, rcond=None)[0]  # noqa: E731

        def direction(r_xz, r_sw):
            rho = r_xz / x - r_sw / s - rc
            dlam = solve(rb - A @ (D * rho))
            dx = D * (A.T @ dlam + rho)
            ds = -dx
            dz = (r_xz - z * dx) / x
            dw = (r_sw - w * ds) / s
            return dx, ds, dlam, dz, dw

        dx, ds, dlam, dz, dw = direction(-x * z, -s * w)
        ap = min(_max_step(x, dx), _max_step(s, ds))
        ad = min(_max_step(z, dz), _max_step(w, dw))
        mu_aff = ((x + ap * dx) @ (z + ad * dz) + (s + ap * ds) @ (w + ad * dw)) / (2 * N)
        sigma = (mu_aff / mu) ** 3
        dx, ds, dlam, dz, dw = direction(sigma * mu - x * z - dx * dz, sigma * mu - s * w - ds * dw)
        ap = min(1.0, 0.9995 * min(_max_step(x, dx), _max_step(s, ds)))
        ad = min(1.0, 0.9995 * min(_max_step(z, dz), _max_step(w, dw)))
        x = x + ap * dx
        s = s + ap * ds
        lam = lam + ad * dlam
        z = z + ad * dz
        w = w + ad * dw
    return x, lam, it, converged


def _max_step(v, dv):
    neg = dv < 0
    if not neg.any():
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _snap_to_vertex(X, y, tau_rows, beta):
    """Best basic solution among rows with the smallest residuals."""
    p1 = X.shape[1]
    r = np.abs(y - X @ beta)
    order = np.argsort(r, kind="stable")
    pool = list(order[: min(len(y), 2 * p1)])
    # repeated design rows can leave the pool rank deficient: extend it with
    # the next rows that add a direction
    rank = np.linalg.matrix_rank(X[pool])
    for i in order[len(pool):]:
        if rank == p1:
            break
        if np.linalg.matrix_rank(X[pool + [i]]) > rank:
            pool.append(i)
            rank += 1
    best, best_obj = None, np.inf
    for h in itertools.combinations(pool, p1):
        Xh = X[list(h)]
        if abs(np.linalg.det(Xh)) < 1e-12 * max(1.0, np.abs(Xh).max()) ** p1:
            continue
        cand = np.linalg.solve(Xh, y[list(h)])
        obj = _objective(X, y, tau_rows, cand)
        if obj < best_obj:
            best, best_obj = cand, obj
    return best, best_obj


def _objective(X, y, tau_rows, beta):
    r = y - X @ beta
    return float(np.sum(r * (tau_rows - (r < 0))))


def weighted_rq(X, y, tau_rows, tol=1e-12):
    """Minimize ``sum_r rho_{tau_r}(y_r - x_r'b)`` with row-specific levels."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    tau_rows = np.broadcast_to(np.asarray(tau_rows, dtype=float), y.shape)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ContractError("design matrix is rank deficient")
    x0 = 1.0 - tau_rows
    A = X.T
    x, lam, iters, converged = _bounded_lp(A, A @ x0, -y, x0.copy(), tol=tol)
    beta = -lam
    obj = _objective(X, y, tau_rows, beta)
    snapped, snapped_obj = _snap_to_vertex(X, y, tau_rows, beta)
    status = "optimal" if converged else "max_iter"
    if snapped is not None and snapped_obj <= obj + 1e-9 * max(1.0, abs(obj)):
        return snapped, snapped_obj, status
    log.warning("vertex snap failed to match interior-point objective (%.3g vs %.3g)", snapped_obj, obj)
    return beta, obj, status + "_interior"


def rq_fit(data: Dataset, tau: float) -> FitResult:
    beta, obj, status = weighted_rq(data.X, data.y, float(tau))
    return FitResult(beta[None, :], obj, status, np.array([float(tau)]))


def rq_fit_levels(data: Dataset, taus) -> FitResult:
    taus = as_levels(taus)
    fits = [rq_fit(data, t) for t in taus]
    status = "optimal" if all(f.status == "optimal" for f in fits) else "degraded"
    return FitResult(np.vstack([f.beta for f in fits]), sum(f.objective for f in fits), status, taus.taus)


def stacked_design(data: Dataset, k: int):
    """Design for ``k`` level-specific intercepts and shared slopes."""
    n, p = data.n, data.p
    Xs = np.zeros((k * n, k + p))
    for d in range(k):
        Xs[d * n:(d + 1) * n, d] = 1.0
        Xs[d * n:(d + 1) * n, k:] = data.X[:, 1:]
    return Xs


def cqr_fit(data: Dataset, taus) -> FitResult:
    """Composite quantile regression: level intercepts, one slope vector."""
    taus = as_levels(taus)
    k = taus.k
    Xs = stacked_design(data, k)
    ys = np.tile(data.y, k)
    tau_rows = np.repeat(taus.taus, data.n)
    theta, obj, status = weighted_rq(Xs, ys, tau_rows)
    par = Parameterization.common_slope(k, data.p)
    return FitResult(par.blocks(theta), obj, status, taus.taus, theta)


def rq_enumerate(X, y, tau_rows):
    """Exhaustive search over all basic solutions (test oracle)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    tau_rows = np.broadcast_to(np.asarray(tau_rows, dtype=float), y.shape)
    p1 = X.shape[1]
    best, best_obj = None, np.inf
    for h in itertools.combinations(range(len(y)), p1):
        Xh = X[list(h)]
        if abs(np.linalg.det(Xh)) < 1e-10:
            continue
        cand = np.linalg.solve(Xh, y[list(h)])
        obj = _objective(X, y, tau_rows, cand)
        if obj < best_obj:
            best, best_obj = cand, obj
    return best, best_obj

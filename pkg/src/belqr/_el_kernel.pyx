# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled EL kernel: quantile estimating functions and the Newton solve of
the EL dual. Same algorithm and constants as ``_el_py``."""
import numpy as np

from libc.math cimport fabs, log, log1p, sqrt, INFINITY

cdef enum:
    CONVERGED = 0
    INFEASIBLE = 1
    MAXITER = 2
    SINGULAR = 3

cdef int MAX_ITER = 50
cdef int MAX_HALVINGS = 60
cdef double GRAD_TOL = 1e-10
cdef double SUM_TOL = 1e-10
cdef double SUM_GIVE_UP = 1e-6
cdef double CONSTRAINT_TOL = 1e-8
cdef double ARMIJO = 1e-4
cdef double FLAT_DECREMENT = 1e-12


cdef void _fill(const double[::1] y, const double[:, ::1] X, const double[:, ::1] betas,
                const double[::1] taus, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0], p1 = X.shape[1], k = taus.shape[0]
    cdef Py_ssize_t i, d, j
    cdef double acc, r, s
    for i in range(n):
        for d in range(k):
            acc = 0.0
            for j in range(p1):
                acc = acc + X[i, j] * betas[d, j]
            r = y[i] - acc
            if r < 0:
                s = 1.0 - taus[d]
            elif r > 0:
                s = -taus[d]
            else:
                s = 0.0
            for j in range(p1):
                out[i, d * p1 + j] = s * X[i, j]


cdef inline double _log_star(double s, double eps) noexcept nogil:
    # argument is z - 1: log1p keeps repeated rows from stacking rounding error
    cdef double z = 1.0 + s
    if z >= eps:
        return log1p(s)
    return log(eps) - 1.5 + 2.0 * z / eps - z * z / (2.0 * eps * eps)


cdef int _cholesky(double[:, ::1] P, double[:, ::1] L) noexcept nogil:
    cdef Py_ssize_t m = P.shape[0], a, b, c
    cdef double s, scale = 0.0
    for a in range(m):
        if P[a, a] > scale:
            scale = P[a, a]
    if scale <= 0.0:
        return 0
    for a in range(m):
        s = P[a, a]
        for c in range(a):
            s -= L[a, c] * L[a, c]
        if s <= 1e-14 * scale:
            return 0
        L[a, a] = sqrt(s)
        for b in range(a + 1, m):
            s = P[b, a]
            for c in range(a):
                s -= L[b, c] * L[a, c]
            L[b, a] = s / L[a, a]
    return 1


cdef void _chol_solve(double[:, ::1] L, double[::1] g, double[::1] v, double[::1] x) noexcept nogil:
    cdef Py_ssize_t m = L.shape[0], a, c
    cdef double s
    for a in range(m):
        s = g[a]
        for c in range(a):
            s -= L[a, c] * v[c]
        v[a] = s / L[a, a]
    for a in range(m - 1, -1, -1):
        s = v[a]
        for c in range(a + 1, m):
            s -= L[c, a] * x[c]
        x[a] = s / L[a, a]


cdef class Workspace:
    """Preallocated buffers for repeated EL evaluations on fixed data."""

    cdef const double[::1] y
    cdef const double[:, ::1] X
    cdef const double[::1] taus
    cdef double[:, ::1] M
    cdef double[::1] lam, lam_t, z, z_t, s, s_t, g, step, v
    cdef double[:, ::1] P, L
    cdef public Py_ssize_t n, m

    def __init__(self, y, X, taus):
        self.y = np.ascontiguousarray(y, dtype=float)
        self.X = np.ascontiguousarray(X, dtype=float)
        self.taus = np.ascontiguousarray(taus, dtype=float)
        self.n = self.X.shape[0]
        self.m = self.X.shape[1] * self.taus.shape[0]
        self._alloc(self.n, self.m)

    cdef void _alloc(self, Py_ssize_t n, Py_ssize_t m):
        self.M = np.empty((n, m))
        self.lam = np.empty(m)
        self.lam_t = np.empty(m)
        self.g = np.empty(m)
        self.step = np.empty(m)
        self.v = np.empty(m)
        self.z = np.empty(n)
        self.z_t = np.empty(n)
        self.s = np.empty(n)
        self.s_t = np.empty(n)
        self.P = np.empty((m, m))
        self.L = np.zeros((m, m))

    cdef int _solve(self, double* log_ratio, int* iters) noexcept nogil:
        cdef Py_ssize_t n = self.M.shape[0], m = self.M.shape[1]
        cdef Py_ssize_t i, a, b, h
        cdef double eps = 1.0 / n
        cdef double f = 0.0, f_t, zi, d1, d2, gmax, sum_w, slope, t, acc, mi, gtol, mscale = 0.0
        cdef int status = MAXITER, it = 0, accepted, allpos, allneg
        cdef const double* Mp = &self.M[0, 0]
        cdef const double* row
        cdef double* lam = &self.lam[0]
        cdef double* lam_t = &self.lam_t[0]
        cdef double* z = &self.z[0]
        cdef double* z_t = &self.z_t[0]
        cdef double* s = &self.s[0]
        cdef double* s_t = &self.s_t[0]
        cdef double* g = &self.g[0]
        cdef double* step = &self.step[0]
        cdef double* P = &self.P[0, 0]
        for a in range(m):
            allpos = 1
            allneg = 1
            for i in range(n):
                mi = Mp[i * m + a]
                if fabs(mi) > mscale:
                    mscale = fabs(mi)
                if mi <= 0:
                    allpos = 0
                if mi >= 0:
                    allneg = 0
            if allpos or allneg:
                for b in range(m):
                    lam[b] = 0.0
                iters[0] = 0
                log_ratio[0] = -INFINITY
                return INFEASIBLE
        gtol = GRAD_TOL * n * mscale
        for a in range(m):
            lam[a] = 0.0
        for i in range(n):
            z[i] = 1.0
            s[i] = 0.0
        gmax = INFINITY
        for it in range(1, MAX_ITER + 1):
            for a in range(m):
                g[a] = 0.0
                for b in range(a + 1):
                    P[a * m + b] = 0.0
            for i in range(n):
                zi = z[i]
                if zi >= eps:
                    d1 = 1.0 / zi
                    d2 = d1 * d1
                else:
                    d1 = 2.0 / eps - zi / (eps * eps)
                    d2 = 1.0 / (eps * eps)
                row = Mp + i * m
                for a in range(m):
                    mi = row[a]
                    if mi == 0.0:
                        continue
                    g[a] += d1 * mi
                    mi = d2 * mi
                    for b in range(a + 1):
                        P[a * m + b] += mi * row[b]
            gmax = 0.0
            for a in range(m):
                if fabs(g[a]) > gmax:
                    gmax = fabs(g[a])
            if gmax <= gtol:
                sum_w = 0.0
                for i in range(n):
                    sum_w += 1.0 / (n * z[i])
                if fabs(sum_w - 1.0) <= SUM_TOL:
                    status = CONVERGED
                    break
                if fabs(sum_w - 1.0) > SUM_GIVE_UP:
                    status = INFEASIBLE
                    break
            for a in range(m):
                for b in range(a):
                    P[b * m + a] = P[a * m + b]
            if not _cholesky(self.P, self.L):
                status = SINGULAR if it == 1 else INFEASIBLE
                break
            _chol_solve(self.L, self.g, self.v, self.step)
            slope = 0.0
            for a in range(m):
                slope += g[a] * step[a]
            t = 1.0
            accepted = 0
            for h in range(MAX_HALVINGS):
                for a in range(m):
                    lam_t[a] = lam[a] + t * step[a]
                f_t = 0.0
                for i in range(n):
                    row = Mp + i * m
                    acc = 0.0
                    for a in range(m):
                        acc += row[a] * lam_t[a]
                    s_t[i] = acc
                    z_t[i] = 1.0 + acc
                    f_t += _log_star(acc, eps)
                if f_t >= f + ARMIJO * t * slope or slope <= FLAT_DECREMENT * (1.0 + fabs(f)):
                    accepted = 1
                    break
                t *= 0.5
            if not accepted:
                status = INFEASIBLE if gmax <= gtol else MAXITER
                break
            for a in range(m):
                lam[a] = lam_t[a]
            for i in range(n):
                z[i] = z_t[i]
                s[i] = s_t[i]
            f = f_t
        iters[0] = it
        if status == CONVERGED:
            for i in range(n):
                if z[i] <= 0.5 * eps:
                    status = INFEASIBLE
                    break
        if status == CONVERGED:
            for a in range(m):
                acc = 0.0
                for i in range(n):
                    acc += Mp[i * m + a] / (n * z[i])
                if fabs(acc) > CONSTRAINT_TOL:
                    status = INFEASIBLE
                    break
        if status != CONVERGED:
            log_ratio[0] = -INFINITY
            return status
        acc = 0.0
        for i in range(n):
            acc += log1p(s[i])
        log_ratio[0] = -acc
        return status

    def log_ratio(self, betas):
        """Return ``(log_ratio, status)`` at coefficient blocks ``betas``."""
        cdef const double[:, ::1] b = np.ascontiguousarray(betas, dtype=float)
        cdef double lr = 0.0
        cdef int iters = 0, status
        with nogil:
            _fill(self.y, self.X, b, self.taus, self.M)
            status = self._solve(&lr, &iters)
        return lr, status

    def solve_matrix(self, M):
        """Solve the dual for an arbitrary ``n x m`` matrix ``M``."""
        cdef const double[:, ::1] Mv = np.ascontiguousarray(M, dtype=float)
        cdef double lr = 0.0
        cdef int iters = 0, status
        if Mv.shape[0] != self.M.shape[0] or Mv.shape[1] != self.M.shape[1]:
            self._alloc(Mv.shape[0], Mv.shape[1])
        self.M[:, :] = Mv
        with nogil:
            status = self._solve(&lr, &iters)
        return (np.asarray(self.lam).copy(), np.asarray(self.z).copy(), lr, status, iters)


def estimating_functions(y, X, betas, taus):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=float)
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=float)
    cdef const double[:, ::1] bv = np.ascontiguousarray(betas, dtype=float)
    cdef const double[::1] tv = np.ascontiguousarray(taus, dtype=float)
    out = np.empty((Xv.shape[0], Xv.shape[1] * tv.shape[0]))
    cdef double[:, ::1] ov = out
    with nogil:
        _fill(yv, Xv, bv, tv, ov)
    return out


def solve_dual(M):
    M = np.ascontiguousarray(M, dtype=float)
    n, m = M.shape
    ws = Workspace(np.zeros(n), np.ones((n, 1)), np.full(m, 0.5))
    return ws.solve_matrix(M)

"""Profile empirical likelihood ratio for joint quantile estimating equations.

The numerical work happens in a kernel module: the compiled ``_el_kernel``
when it was built, otherwise the numpy ``_el_py``. Set ``BELQR_BACKEND=python``
to force the fallback.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass

import numpy as np

from . import _el_py
from .model import ContractError, Dataset, ParamVector, as_levels

if os.environ.get("BELQR_BACKEND", "").lower() == "python":
    _kernel = _el_py
else:
    try:
        from . import _el_kernel as _kernel
    except ImportError:  # pragma: no cover - depends on the build
        _kernel = _el_py

BACKEND = "compiled" if _kernel is not _el_py else "python"


class ELStatus(str, enum.Enum):
    CONVERGED = "Converged"
    INFEASIBLE = "Infeasible"
    MAXITER = "MaxIter"


_STATUS = {
    _el_py.CONVERGED: (ELStatus.CONVERGED, None),
    _el_py.INFEASIBLE: (ELStatus.INFEASIBLE, "zero outside the convex hull of the estimating functions"),
    _el_py.MAXITER: (ELStatus.MAXITER, "Newton iteration budget exhausted"),
    _el_py.SINGULAR: (ELStatus.INFEASIBLE, "singular dual Hessian: estimating functions are linearly dependent"),
}


@dataclass(frozen=True)
class ELResult:
    lam: np.ndarray
    weights: np.ndarray | None
    log_ratio: float
    status: ELStatus
    n: int
    iterations: int = 0
    diagnostic: str | None = None

    @property
    def converged(self) -> bool:
        return self.status is ELStatus.CONVERGED

    @property
    def gamma(self) -> float:
        """Average log weight ratio, ``log_ratio / n``."""
        return self.log_ratio / self.n


def estimating_matrix(y, X, betas, taus) -> np.ndarray:
    """``n x k(p+1)`` matrix of quantile estimating functions.

    Column ``d*(p+1) + j`` holds ``psi_{tau_d}(y_i - x_i'beta_d) * x_ij``.
    """
    X = np.asarray(X, dtype=float)
    betas = np.asarray(betas, dtype=float).reshape(len(taus), X.shape[1])
    return _kernel.estimating_functions(y, X, betas, np.asarray(taus, dtype=float))


def estimating_functions(data: Dataset, zeta: ParamVector, taus) -> np.ndarray:
    taus = as_levels(taus)
    par = zeta.parameterization
    if par.k != taus.k or par.p != data.p:
        raise ContractError(f"parameterization (k={par.k}, p={par.p}) does not match data p={data.p}, k={taus.k}")
    return estimating_matrix(data.y, data.X, zeta.blocks(), taus.taus)


def solve_lambda(M) -> ELResult:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ContractError(f"estimating-function matrix must be n x m with n, m >= 1, got {M.shape}")
    if not np.isfinite(M).all():
        raise ContractError("estimating-function matrix has non-finite entries")
    lam, z, log_ratio, code, iters = _kernel.solve_dual(M)
    status, diag = _STATUS[code]
    n = M.shape[0]
    weights = 1.0 / (n * z) if status is ELStatus.CONVERGED else None
    return ELResult(np.asarray(lam), weights, float(log_ratio), status, n, int(iters), diag)


def log_el_ratio(data: Dataset, zeta: ParamVector, taus) -> ELResult:
    return solve_lambda(estimating_functions(data, zeta, taus))


class ELEvaluator:
    """Repeated ``log R`` evaluations on fixed data, without allocation.

    ``evaluator(betas)`` returns ``(log_ratio, converged)``.
    """

    def __init__(self, y, X, taus):
        self.taus = np.ascontiguousarray(taus, dtype=float)
        self._ws = _kernel.Workspace(y, X, self.taus)
        self.p1 = np.asarray(X).shape[1]

    def __call__(self, betas):
        log_ratio, code = self._ws.log_ratio(np.reshape(betas, (self.taus.size, self.p1)))
        return log_ratio, code == _el_py.CONVERGED


def score_statistic(data: Dataset, zeta: ParamVector, taus) -> np.ndarray:
    """``n^{-1/2} sum_i m(X_i, Y_i, zeta)``."""
    M = estimating_functions(data, zeta, taus)
    return M.sum(axis=0) / np.sqrt(data.n)

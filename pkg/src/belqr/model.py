"""Domain types shared by every estimator: data, quantile levels and
parameterizations, plus the quantile score and check loss."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ContractError(ValueError):
    """Raised when an input violates a documented shape or value contract."""


def psi_score(u, tau):
    """Quantile score: ``1 - tau`` for negative ``u``, ``-tau`` for positive
    ``u`` and exactly zero at ``u == 0``. Vectorized over ``u``."""
    u = np.asarray(u, dtype=float)
    out = np.where(u < 0, 1.0 - tau, -tau)
    out = np.where(u == 0, 0.0, out)
    return out[()] if out.ndim == 0 else out


def check_loss(u, tau):
    """Check loss ``u * (tau - 1{u < 0})``."""
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u < 0))
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class Dataset:
    """Response ``y`` and design ``X`` whose first column is the intercept."""

    y: np.ndarray
    X: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float).reshape(-1)
        X = np.ascontiguousarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ContractError(f"design shape {X.shape} does not match response length {y.shape[0]}")
        n, p1 = X.shape
        if n < p1 + 1:
            raise ContractError(f"need n >= p+2 observations, got n={n} with p={p1 - 1}")
        if not (np.isfinite(y).all() and np.isfinite(X).all()):
            raise ContractError("dataset contains non-finite entries")
        if not np.all(X[:, 0] == 1.0):
            raise ContractError("first design column must be the intercept (all ones)")
        if self.names is not None and len(self.names) != p1 - 1:
            raise ContractError(f"expected {p1 - 1} covariate names, got {len(self.names)}")
        y.flags.writeable = False
        X.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def from_covariates(cls, y, covariates, names=None) -> "Dataset":
        """Build a dataset by prepending an intercept column to ``covariates``."""
        y = np.asarray(y, dtype=float)
        Z = np.asarray(covariates, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        X = np.column_stack([np.ones(len(y)), Z])
        return cls(y, X, names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1] - 1

    @property
    def coef_names(self) -> tuple[str, ...]:
        names = self.names or tuple(f"x{j}" for j in range(1, self.p + 1))
        return ("intercept",) + tuple(names)

    def subset(self, index) -> "Dataset":
        return Dataset(self.y[index], self.X[index], self.names)


@dataclass(frozen=True)
class QuantileLevels:
    taus: np.ndarray

    def __post_init__(self):
        taus = np.array(self.taus, dtype=float).reshape(-1)
        if taus.size == 0:
            raise ContractError("at least one quantile level is required")
        if np.any(taus <= 0) or np.any(taus >= 1):
            raise ContractError(f"quantile levels must lie in (0, 1): {taus}")
        if np.any(np.diff(taus) <= 0):
            raise ContractError(f"quantile levels must be strictly increasing: {taus}")
        taus.flags.writeable = False
        object.__setattr__(self, "taus", taus)

    @property
    def k(self) -> int:
        return self.taus.size

    def __len__(self):
        return self.k

    def __iter__(self):
        return iter(self.taus)


def as_levels(taus) -> QuantileLevels:
    if isinstance(taus, QuantileLevels):
        return taus
    return QuantileLevels(np.atleast_1d(np.asarray(taus, dtype=float)))


FULL = "Full"
COMMON_SLOPE = "CommonSlope"
LINEAR_MAP = "LinearMap"


@dataclass(frozen=True)
class Parameterization:
    """Linear map ``zeta_full = T @ theta`` from reduced to full coordinates.

    The full vector stacks ``k`` coefficient blocks of size ``p + 1``,
    one block per quantile level, intercept first within each block.
    """

    kind: str
    k: int
    p: int
    T: np.ndarray = field(repr=False)

    def __post_init__(self):
        T = np.array(self.T, dtype=float)
        full_dim = self.k * (self.p + 1)
        if T.ndim != 2 or T.shape[0] != full_dim or T.shape[1] > full_dim:
            raise ContractError(f"map must be {full_dim} x q with q <= {full_dim}, got {T.shape}")
        if np.linalg.matrix_rank(T) != T.shape[1]:
            raise ContractError("parameterization map must have full column rank")
        if self.kind == FULL and not np.array_equal(T, np.eye(full_dim)):
            raise ContractError("Full parameterization must use the identity map")
        T.flags.writeable = False
        object.__setattr__(self, "T", T)

    @classmethod
    def full(cls, k: int, p: int) -> "Parameterization":
        return cls(FULL, k, p, np.eye(k * (p + 1)))

    @classmethod
    def common_slope(cls, k: int, p: int) -> "Parameterization":
        """``k`` free intercepts followed by ``p`` slopes shared by all levels."""
        return cls(COMMON_SLOPE, k, p, _shared_map(k, p, range(1, p + 1)))

    @classmethod
    def shared(cls, k: int, p: int, shared_columns: Sequence[int]) -> "Parameterization":
        """Share the listed design columns across levels; others stay free.

        Reduced ordering: free coefficients level by level, then one value
        per shared column.
        """
        shared_columns = sorted(set(int(j) for j in shared_columns))
        if shared_columns == list(range(1, p + 1)):
            return cls.common_slope(k, p)
        if not shared_columns:
            return cls.full(k, p)
        return cls(LINEAR_MAP, k, p, _shared_map(k, p, shared_columns))

    @classmethod
    def linear_map(cls, k: int, p: int, T) -> "Parameterization":
        return cls(LINEAR_MAP, k, p, T)

    @property
    def q(self) -> int:
        return self.T.shape[1]

    @property
    def full_dim(self) -> int:
        return self.T.shape[0]

    def expand(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.q,):
            raise ContractError(f"expected reduced vector of length {self.q}, got shape {theta.shape}")
        if self.kind == FULL:
            return theta.copy()
        return self.T @ theta

    def reduce(self, zeta_full) -> np.ndarray:
        """Least-squares projection of a full vector onto reduced coordinates."""
        zeta_full = np.asarray(zeta_full, dtype=float)
        if self.kind == FULL:
            return zeta_full.copy()
        return np.linalg.lstsq(self.T, zeta_full, rcond=None)[0]

    def blocks(self, theta) -> np.ndarray:
        """Expanded coefficients as a ``k x (p+1)`` array."""
        return self.expand(theta).reshape(self.k, self.p + 1)


def _shared_map(k: int, p: int, shared_columns) -> np.ndarray:
    p1 = p + 1
    shared_columns = list(shared_columns)
    free = [j for j in range(p1) if j not in shared_columns]
    q = k * len(free) + len(shared_columns)
    T = np.zeros((k * p1, q))
    col = 0
    for d in range(k):
        for j in free:
            T[d * p1 + j, col] = 1.0
            col += 1
    for j in shared_columns:
        for d in range(k):
            T[d * p1 + j, col] = 1.0
        col += 1
    return T


@dataclass(frozen=True)
class ParamVector:
    theta: np.ndarray
    parameterization: Parameterization

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if theta.size != self.parameterization.q:
            raise ContractError(
                f"parameter length {theta.size} does not match parameterization q={self.parameterization.q}"
            )
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    def expand(self) -> np.ndarray:
        return self.parameterization.expand(self.theta)

    def blocks(self) -> np.ndarray:
        return self.parameterization.blocks(self.theta)


def expand(param: ParamVector) -> np.ndarray:
    return param.expand()

"""Composable proper priors on the coefficient vector.

A prior is a list of terms. Every term owns some coordinates and places a
density on a linear contrast ``u = zeta[index] - zeta[anchor] - center``;
with no anchor the contrast is just ``zeta[index] - center``. Owning each
coordinate exactly once, with an acyclic anchor graph, makes the joint
density proper, so flat priors cannot be expressed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .model import ContractError

LOG_2PI = np.log(2.0 * np.pi)


def _spd(matrix, what: str) -> np.ndarray:
    S = np.atleast_2d(np.asarray(matrix, dtype=float))
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, rtol=1e-12, atol=0):
        raise ContractError(f"{what} must be a symmetric matrix")
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ContractError(f"{what} must be positive definite") from None
    return S


def _as_cov(cov, dim: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        return np.eye(dim) * float(cov)
    if cov.ndim == 1:
        return np.diag(cov)
    return cov


class _Gaussian:
    def __init__(self, cov):
        self.cov = _spd(cov, "covariance")
        self.chol = np.linalg.cholesky(self.cov)
        self.precision = np.linalg.inv(self.cov)
        self.precision = 0.5 * (self.precision + self.precision.T)
        dim = self.cov.shape[0]
        self.log_norm = -0.5 * dim * LOG_2PI - np.log(np.diag(self.chol)).sum()

    def logpdf(self, u):
        w = np.linalg.solve(self.chol, u) if u.size > 1 else u / self.chol[0, 0]
        return self.log_norm - 0.5 * float(w @ w)

    def hessian(self):
        return self.precision


class _SphericalT:
    """Multivariate t with scatter ``S`` and ``df`` degrees of freedom."""

    def __init__(self, scatter, df):
        if not df > 0:
            raise ContractError("degrees of freedom must be positive")
        self.cov = _spd(scatter, "scatter")
        self.chol = np.linalg.cholesky(self.cov)
        self.precision = np.linalg.inv(self.cov)
        self.precision = 0.5 * (self.precision + self.precision.T)
        self.df = float(df)
        dim = self.cov.shape[0]
        self.dim = dim
        self.log_norm = (
            gammaln(0.5 * (df + dim)) - gammaln(0.5 * df) - 0.5 * dim * np.log(df * np.pi)
            - np.log(np.diag(self.chol)).sum()
        )

    def logpdf(self, u):
        w = np.linalg.solve(self.chol, u) if u.size > 1 else u / self.chol[0, 0]
        return self.log_norm - 0.5 * (self.df + self.dim) * np.log1p(float(w @ w) / self.df)

    def hessian(self):
        return (self.df + self.dim) / self.df * self.precision


@dataclass(frozen=True)
class NormalTerm:
    """``zeta[index] - zeta[anchor] ~ N(mean, cov)``; ``anchor`` optional.

    ``cov`` may be a scalar variance, a vector of variances or a matrix.
    """

    index: Sequence[int]
    mean: object = 0.0
    cov: object = 1.0
    anchor: Sequence[int] | None = None

    def density(self):
        return _Gaussian(_as_cov(self.cov, len(self.index)))


@dataclass(frozen=True)
class TTerm:
    """``(zeta[index] - zeta[anchor] - center) / scale ~ t_df`` (spherical)."""

    index: Sequence[int]
    scale: object = 1.0
    df: float = 3.0
    center: object = 0.0
    anchor: Sequence[int] | None = None

    @property
    def mean(self):
        return self.center

    def density(self):
        scale = np.asarray(self.scale, dtype=float)
        dim = len(self.index)
        if scale.ndim <= 1:
            scatter = np.diag(np.broadcast_to(scale, (dim,)) ** 2)
        else:
            scatter = scale
        return _SphericalT(scatter, self.df)


@dataclass(frozen=True)
class LinkedTerm:
    """Linked prior over ``k`` coefficient blocks of size ``p1``.

    ``Omega^{-1/2}(beta_1 - beta_p0) ~ g_1`` and, given ``beta_1``,
    ``Sigma_d^{-1/2}(beta_d - beta_1) ~ g_d`` for ``d = 2..k``. The family
    ``g`` is the spherical normal or Student-t. ``offset`` locates the first
    block inside the parameter vector.
    """

    k: int
    beta_p0: Sequence[float]
    omega: object
    sigmas: Sequence[object]
    family: str = "normal"
    df: float = 3.0
    offset: int = 0

    @property
    def p1(self) -> int:
        return len(self.beta_p0)

    def parts(self):
        """Expand into equivalent anchored terms."""
        p1 = self.p1
        if len(self.sigmas) != self.k - 1:
            raise ContractError(f"linked prior needs {self.k - 1} difference scatters, got {len(self.sigmas)}")
        if self.family not in ("normal", "t"):
            raise ContractError(f"unknown linked-prior family {self.family!r}")
        first = list(range(self.offset, self.offset + p1))
        scatters = [_as_cov(self.omega, p1)] + [_as_cov(s, p1) for s in self.sigmas]
        out = []
        for d in range(self.k):
            index = list(range(self.offset + d * p1, self.offset + (d + 1) * p1))
            center = np.asarray(self.beta_p0, dtype=float) if d == 0 else np.zeros(p1)
            anchor = None if d == 0 else first
            if self.family == "normal":
                out.append(NormalTerm(index, center, scatters[d], anchor))
            else:
                out.append(TTerm(index, scatters[d], self.df, center, anchor))
        return out


@dataclass
class _Compiled:
    index: np.ndarray
    anchor: np.ndarray | None
    center: np.ndarray
    dist: object


@dataclass
class PriorSpec:
    """Joint prior assembled from terms; validated at construction."""

    dim: int
    terms: list = field(default_factory=list)

    def __post_init__(self):
        flat = []
        for term in self.terms:
            flat.extend(term.parts() if isinstance(term, LinkedTerm) else [term])
        owner = np.full(self.dim, -1)
        compiled = []
        for t_id, term in enumerate(flat):
            index = np.asarray(term.index, dtype=int).reshape(-1)
            if index.size == 0 or index.min() < 0 or index.max() >= self.dim:
                raise ContractError(f"prior term indices {index.tolist()} out of range for dimension {self.dim}")
            if np.any(owner[index] >= 0):
                raise ContractError(f"coordinates {index.tolist()} are given more than one prior term")
            owner[index] = t_id
            anchor = None
            if term.anchor is not None:
                anchor = np.asarray(term.anchor, dtype=int).reshape(-1)
                if anchor.size != index.size:
                    raise ContractError("anchor must have the same length as index")
            center = np.broadcast_to(np.asarray(term.mean, dtype=float), index.shape).copy()
            compiled.append(_Compiled(index, anchor, center, term.density()))
        if np.any(owner < 0):
            missing = np.flatnonzero(owner < 0).tolist()
            raise ContractError(f"coordinates {missing} have no prior term; flat priors are not allowed")
        self._order = _topological_order(compiled, owner)
        self._compiled = compiled
        self._flat_terms = flat
        self._build_fast_path()

    def _build_fast_path(self):
        uni = [c for c in self._compiled if c.index.size == 1]
        self._multi = [c for c in self._compiled if c.index.size > 1]
        self._u_index = np.array([c.index[0] for c in uni], dtype=int)
        self._u_anchor = np.array([-1 if c.anchor is None else c.anchor[0] for c in uni], dtype=int)
        self._u_has_anchor = self._u_anchor >= 0
        self._u_anchor_safe = np.where(self._u_has_anchor, self._u_anchor, 0)
        self._u_center = np.array([c.center[0] for c in uni])
        self._u_inv_scale = np.array([1.0 / c.dist.chol[0, 0] for c in uni])
        self._u_log_norm = float(sum(c.dist.log_norm for c in uni))
        is_t = np.array([isinstance(c.dist, _SphericalT) for c in uni], dtype=bool)
        self._u_is_t = is_t
        self._u_any_t = bool(is_t.any())
        self._u_df = np.array([c.dist.df if t else 1.0 for c, t in zip(uni, is_t)])

    def log_density(self, zeta) -> float:
        zeta = np.asarray(zeta, dtype=float)
        if zeta.shape != (self.dim,):
            raise ContractError(f"prior expects a vector of length {self.dim}, got shape {zeta.shape}")
        u = zeta[self._u_index] - self._u_center - np.where(self._u_has_anchor, zeta[self._u_anchor_safe], 0.0)
        w2 = (u * self._u_inv_scale) ** 2
        if self._u_any_t:
            t = self._u_is_t
            total = self._u_log_norm - 0.5 * (w2[~t].sum() + ((self._u_df[t] + 1.0) * np.log1p(w2[t] / self._u_df[t])).sum())
        else:
            total = self._u_log_norm - 0.5 * w2.sum()
        for c in self._multi:
            u = zeta[c.index] - c.center
            if c.anchor is not None:
                u = u - zeta[c.anchor]
            total += c.dist.logpdf(u)
        return total

    def mode(self) -> np.ndarray:
        zeta = np.zeros(self.dim)
        for t_id in self._order:
            c = self._compiled[t_id]
            value = c.center.copy()
            if c.anchor is not None:
                value = value + zeta[c.anchor]
            zeta[c.index] = value
        return zeta

    def hessian_at_mode(self) -> np.ndarray:
        """Negative Hessian of the log density at the mode."""
        H = np.zeros((self.dim, self.dim))
        for c in self._compiled:
            A = np.zeros((c.index.size, self.dim))
            A[np.arange(c.index.size), c.index] = 1.0
            if c.anchor is not None:
                A[np.arange(c.index.size), c.anchor] -= 1.0
            H += A.T @ c.dist.hessian() @ A
        return 0.5 * (H + H.T)

    def sample(self, rng, size: int) -> np.ndarray:
        """Draws from a Gaussian prior (t terms use their scatter)."""
        out = np.zeros((size, self.dim))
        for t_id in self._order:
            c = self._compiled[t_id]
            w = rng.standard_normal((size, c.index.size))
            if isinstance(c.dist, _SphericalT):
                w = w / np.sqrt(rng.chisquare(c.dist.df, (size, 1)) / c.dist.df)
            value = c.center + w @ c.dist.chol.T
            if c.anchor is not None:
                value = value + out[:, c.anchor]
            out[:, c.index] = value
        return out

    def to_dict(self) -> dict:
        terms = []
        for t in self._flat_terms:
            d = {
                "index": [int(i) for i in t.index],
                "anchor": None if t.anchor is None else [int(i) for i in t.anchor],
            }
            if isinstance(t, NormalTerm):
                d.update(family="normal", mean=np.asarray(t.mean, float).tolist(), cov=np.asarray(t.cov, float).tolist())
            else:
                d.update(family="t", center=np.asarray(t.center, float).tolist(),
                         scale=np.asarray(t.scale, float).tolist(), df=float(t.df))
            terms.append(d)
        return {"dim": self.dim, "terms": terms}

    @classmethod
    def from_dict(cls, spec: dict) -> "PriorSpec":
        terms = []
        for d in spec["terms"]:
            family = d.get("family", "normal")
            if family == "normal":
                terms.append(NormalTerm(d["index"], d.get("mean", 0.0), d.get("cov", 1.0), d.get("anchor")))
            elif family == "t":
                terms.append(TTerm(d["index"], d.get("scale", 1.0), d.get("df", 3.0), d.get("center", 0.0), d.get("anchor")))
            else:
                raise ContractError(f"unknown prior family {family!r}")
        return cls(int(spec["dim"]), terms)


def _topological_order(compiled, owner):
    deps = []
    for c in compiled:
        deps.append(set() if c.anchor is None else set(owner[c.anchor].tolist()))
    order, state = [], [0] * len(compiled)

    def visit(i):
        if state[i] == 1:
            raise ContractError("prior anchors form a cycle")
        if state[i] == 2:
            return
        state[i] = 1
        for j in deps[i]:
            visit(j)
        state[i] = 2
        order.append(i)

    for i in range(len(compiled)):
        visit(i)
    return order


def log_density(prior: PriorSpec, zeta) -> float:
    return prior.log_density(zeta)


def prior_mode(prior: PriorSpec) -> np.ndarray:
    return prior.mode()


def hessian_at_mode(prior: PriorSpec) -> np.ndarray:
    return prior.hessian_at_mode()


def independent_normal(means, sds) -> PriorSpec:
    """Independent ``N(mean_j, sd_j^2)`` on every coordinate."""
    means = np.atleast_1d(np.asarray(means, dtype=float))
    sds = np.broadcast_to(np.asarray(sds, dtype=float), means.shape)
    return PriorSpec(means.size, [NormalTerm([j], means[j], sds[j] ** 2) for j in range(means.size)])


def difference_prior(k: int, p: int, diff_scales, family: str = "normal", df: float = 3.0,
                     intercept_mean=0.0, intercept_sd=100.0, slope_mean=1.0, slope_sd=100.0) -> PriorSpec:
    """Conditional prior anchored at the lowest level, on the full vector.

    Intercepts and the lowest-level slopes get independent normals; each
    slope ``j`` at level ``d >= 2`` is centred at the same slope at level 1,
    with difference scale ``diff_scales[d-2][j-1]`` (a standard deviation).
    """
    p1 = p + 1
    diff_scales = np.asarray(diff_scales, dtype=float).reshape(k - 1, p)
    terms = []
    for d in range(k):
        terms.append(NormalTerm([d * p1], intercept_mean, intercept_sd ** 2))
        for j in range(1, p1):
            idx = d * p1 + j
            if d == 0:
                terms.append(NormalTerm([idx], slope_mean, slope_sd ** 2))
                continue
            s = diff_scales[d - 1, j - 1]
            if family == "normal":
                terms.append(NormalTerm([idx], 0.0, s ** 2, anchor=[j]))
            elif family == "t":
                terms.append(TTerm([idx], s, df, 0.0, anchor=[j]))
            else:
                raise ContractError(f"unknown family {family!r}")
    return PriorSpec(k * p1, terms)


def shrinking_linked_prior(n: int, k: int, p: int, beta_p0, omega: float = 1.0, sigma_intercept: float = 1.0,
                           sigma_slope: float = 1.0, eps_n: float | None = None, family: str = "normal",
                           df: float = 3.0) -> PriorSpec:
    """Linked prior whose scales shrink with the sample size ``n``.

    ``Omega = omega^2/eps_n I``, ``Sigma_{d,I} = sigma_intercept^2/eps_n`` and
    ``Sigma_{d,S} = sigma_slope^2/n I``; ``eps_n`` defaults to ``sqrt(n)``.
    """
    eps_n = np.sqrt(n) if eps_n is None else float(eps_n)
    p1 = p + 1
    Omega = np.eye(p1) * omega ** 2 / eps_n
    Sigma = np.diag([sigma_intercept ** 2 / eps_n] + [sigma_slope ** 2 / n] * p)
    term = LinkedTerm(k, np.asarray(beta_p0, dtype=float), Omega, [Sigma] * (k - 1), family, df)
    return PriorSpec(k * p1, [term])

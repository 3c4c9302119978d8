"""Asymptotic covariances of the joint quantile estimators.

Data-generating models are location-scale linear models

    Y = x'loc + (x'gamma) e,

so the true ``tau``-quantile coefficients are ``loc + q_e(tau) gamma`` and
the conditional density at that quantile is ``f_e(q_e(tau)) / (x'gamma)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats
from scipy.special import exp1
from scipy.stats import qmc

from .model import ContractError, Dataset, Parameterization, as_levels

log = logging.getLogger(__name__)

QMC_POINTS = 2 ** 20
QMC_SEED = 20100101
EIGEN_FLOOR = 1e-12


def _chisq2(u):
    return -2.0 * np.log1p(-u)


def _two_bernoulli(u):
    return 2.0 * (u >= 0.5)


@dataclass(frozen=True)
class ModelSpec:
    """Location-scale linear model with known error law and covariates.

    ``covariate_ppf`` maps an ``m x p`` array of uniforms to covariates
    (columns independent). ``exx`` and ``exx_scaled`` are the optional
    closed forms of ``E[xx']`` and ``E[xx'/(x'gamma)]``.
    """

    label: str
    loc: np.ndarray
    gamma: np.ndarray
    error: stats.rv_continuous = field(repr=False)
    covariate_ppf: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    exx: np.ndarray | None = field(default=None, repr=False)
    exx_scaled: np.ndarray | None = field(default=None, repr=False)
    names: tuple[str, ...] = ()
    # point where the adjusted intercept is evaluated; NaN marks a
    # continuous covariate taken at its mean
    adjust_at: np.ndarray | None = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return len(self.loc) - 1

    @property
    def homoscedastic(self) -> bool:
        return bool(np.all(self.gamma[1:] == 0))

    def design(self, u) -> np.ndarray:
        cov = np.atleast_2d(self.covariate_ppf(u))
        return np.column_stack([np.ones(cov.shape[0]), cov])

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        X = self.design(rng.random((n, self.p)))
        e = self.error.rvs(size=n, random_state=rng)
        y = X @ self.loc + (X @ self.gamma) * e
        return Dataset(y, X, self.names or None)

    def error_quantile(self, tau) -> np.ndarray:
        return np.asarray(self.error.ppf(tau), dtype=float)

    def error_density_at_quantile(self, tau) -> np.ndarray:
        return np.asarray(self.error.pdf(self.error.ppf(tau)), dtype=float)

    def true_beta(self, taus) -> np.ndarray:
        """``k x (p+1)`` true quantile coefficients."""
        taus = as_levels(taus)
        q = self.error_quantile(taus.taus)
        return self.loc[None, :] + q[:, None] * self.gamma[None, :]

    def covariate_mean(self) -> np.ndarray:
        if self.exx is not None:
            return np.array(self.exx[0], dtype=float)
        return self.qmc_design().mean(axis=0)

    def adjustment_point(self, X=None) -> np.ndarray:
        """Evaluation point of ``a(tau)``; sample means when ``X`` is given."""
        at = np.full(self.p + 1, np.nan) if self.adjust_at is None else np.array(self.adjust_at, dtype=float)
        at[0] = 1.0
        means = self.covariate_mean() if X is None else np.asarray(X).mean(axis=0)
        return np.where(np.isnan(at), means, at)

    def adjusted_intercepts(self, taus, X=None) -> np.ndarray:
        return self.true_beta(taus) @ self.adjustment_point(X)

    def qmc_design(self, m: int = QMC_POINTS, seed: int = QMC_SEED) -> np.ndarray:
        u = qmc.Sobol(self.p, scramble=True, seed=seed).random(m)
        return self.design(u)

    def moment(self, scaled: bool, method: str = "auto") -> np.ndarray:
        """``E[xx']`` or ``E[xx'/(x'gamma)]``; closed form when available."""
        closed = self.exx_scaled if scaled else self.exx
        if scaled and self.homoscedastic:
            closed = self.moment(False, method) / self.gamma[0]
        if closed is not None and method in ("auto", "exact"):
            return np.array(closed, dtype=float)
        if method == "exact":
            raise ContractError(f"no closed-form moment for {self.label}")
        X = self.qmc_design()
        w = 1.0 / (X @ self.gamma) if scaled else np.ones(X.shape[0])
        return (X * w[:, None]).T @ X / X.shape[0]


_EXX_M = np.array([[1.0, 2.0, 1.0], [2.0, 8.0, 2.0], [1.0, 2.0, 2.0]])
# E[1/(1+U)] for U ~ Exp(1); with X = 2U the scaled moments follow from
# E[U/(1+U)] = 1 - c and E[U^2/(1+U)] = c
_C0 = math.e * float(exp1(1.0))
_EXX_M_SCALED = np.array([
    [_C0, 2 * (1 - _C0), _C0],
    [2 * (1 - _C0), 4 * _C0, 2 * (1 - _C0)],
    [_C0, 2 * (1 - _C0), 2 * _C0],
])


def _model_design(u):
    u = np.atleast_2d(u)
    return np.column_stack([_chisq2(u[:, 0]), _two_bernoulli(u[:, 1])])


def _make_models():
    normal = stats.norm(0.0, 2.0)
    lognormal = stats.lognorm(1.0)
    names = ("x", "z")
    homo = np.array([1.0, 0.0, 0.0])
    hetero = np.array([1.0, 0.5, 0.0])
    loc = np.array([0.0, 1.0, 1.0])
    at = np.array([1.0, np.nan, 0.0])
    models = {
        "M1": ModelSpec("M1", loc, homo, normal, _model_design, _EXX_M, None, names, at),
        "M2": ModelSpec("M2", loc, homo, lognormal, _model_design, _EXX_M, None, names, at),
        "M3": ModelSpec("M3", loc, hetero, normal, _model_design, _EXX_M, _EXX_M_SCALED, names, at),
        "M4": ModelSpec("M4", loc, hetero, lognormal, _model_design, _EXX_M, _EXX_M_SCALED, names, at),
        "CoverageModel": ModelSpec(
            "CoverageModel", np.array([2.0, 1.0]), np.array([1.0, 0.0]), normal,
            lambda u: _chisq2(np.atleast_2d(u)[:, 0])[:, None] - 2.0,
            np.array([[1.0, 0.0], [0.0, 4.0]]), None, ("x_centered",), np.array([1.0, 0.0]),
        ),
    }
    return models


MODELS = _make_models()


def get_model(model) -> ModelSpec:
    if isinstance(model, ModelSpec):
        return model
    try:
        return MODELS[str(model)]
    except KeyError:
        raise ContractError(f"unknown model {model!r}; known: {sorted(MODELS)}") from None


def psi_matrix(taus) -> np.ndarray:
    t = as_levels(taus).taus
    return np.minimum.outer(t, t) - np.outer(t, t)


def v11(model, taus, method: str = "auto") -> np.ndarray:
    model = get_model(model)
    return np.kron(psi_matrix(taus), model.moment(False, method))


def v12(model, taus, param: Parameterization | None = None, method: str = "auto") -> np.ndarray:
    """``-dE m / d zeta`` at the truth, times the parameterization map."""
    model = get_model(model)
    taus = as_levels(taus)
    G = model.moment(True, method)
    f = model.error_density_at_quantile(taus.taus)
    full = -np.kron(np.diag(f), G)
    return full if param is None else full @ param.T


def v12_monte_carlo(model, taus, draws: int, seed: int, batch: int = 1_000_000):
    """Plain Monte Carlo estimate of the full ``V12`` with its standard errors.

    Uses the conditional density ``f_e(q)/(x'gamma)`` evaluated at sampled
    covariates; an oracle that shares no code path with the closed forms.
    """
    model = get_model(model)
    taus = as_levels(taus)
    rng = np.random.default_rng(seed)
    f = model.error_density_at_quantile(taus.taus)
    p1 = model.p + 1
    s1 = np.zeros((p1, p1))
    s2 = np.zeros((p1, p1))
    done = 0
    while done < draws:
        m = min(batch, draws - done)
        X = model.design(rng.random((m, model.p)))
        w = 1.0 / (X @ model.gamma)
        terms = X[:, :, None] * X[:, None, :] * w[:, None, None]
        s1 += terms.sum(axis=0)
        s2 += (terms ** 2).sum(axis=0)
        done += m
    mean = s1 / draws
    se = np.sqrt(np.maximum(s2 / draws - mean ** 2, 0.0) / draws)
    full = -np.kron(np.diag(f), mean)
    full_se = np.kron(np.diag(f), se)
    return full, full_se


@dataclass(frozen=True)
class InformationResult:
    V11: np.ndarray
    V12: np.ndarray
    info: np.ndarray
    acov: np.ndarray
    diagnostic: str | None = None

    def Jn(self, n: int) -> np.ndarray:
        return n * self.info


def _inverse(info) -> tuple[np.ndarray, str | None]:
    vals, vecs = np.linalg.eigh((info + info.T) / 2.0)
    if vals.min() > EIGEN_FLOOR * max(vals.max(), 1.0):
        return np.linalg.inv(info), None
    keep = vals > EIGEN_FLOOR * max(vals.max(), 1.0)
    inv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return inv, f"information is singular ({int((~keep).sum())} null directions); pseudo-inverse used"


def information(model, taus, param: Parameterization | None = None, method: str = "auto") -> InformationResult:
    model = get_model(model)
    taus = as_levels(taus)
    param = param or Parameterization.full(taus.k, model.p)
    A = v11(model, taus, method)
    B = v12(model, taus, param, method)
    info = B.T @ np.linalg.solve(A, B)
    info = (info + info.T) / 2.0
    acov, diag = _inverse(info)
    if diag:
        log.warning(diag)
    return InformationResult(A, B, info, acov, diag)


def cqr_acov(model, taus, method: str = "auto") -> np.ndarray:
    """Sandwich covariance of CQR in ``(a_1..a_k, b)`` coordinates."""
    model = get_model(model)
    taus = as_levels(taus)
    if not model.homoscedastic:
        raise ContractError("CQR targets a common slope; its covariance is defined here for homoscedastic models")
    k, p = taus.k, model.p
    G = model.moment(False, method)
    f = model.error_density_at_quantile(taus.taus) / model.gamma[0]
    Psi = psi_matrix(taus)
    # E[w_d w_d'^T] with w_d = (e_d, x_S) only depends on G
    def cross(d, e):
        W = np.zeros((k + p, k + p))
        W[d, e] = 1.0
        W[d, k:] = G[0, 1:]
        W[k:, e] = G[1:, 0]
        W[k:, k:] = G[1:, 1:]
        return W

    A = sum(f[d] * cross(d, d) for d in range(k))
    B = sum(Psi[d, e] * cross(d, e) for d in range(k) for e in range(k))
    Ai = np.linalg.inv(A)
    return Ai @ B @ Ai


def cqr_acov_simulated(model, taus, n: int, reps: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``n Cov(theta_hat)`` over simulated CQR fits, with entrywise s.e."""
    from .quantreg import cqr_fit

    model = get_model(model)
    taus = as_levels(taus)
    truth = np.concatenate([model.true_beta(taus)[:, 0], model.loc[1:]])
    seeds = np.random.SeedSequence(seed).spawn(reps)
    errs = np.array([cqr_fit(model.sample(n, np.random.default_rng(s)), taus).theta - truth for s in seeds])
    prods = errs[:, :, None] * errs[:, None, :] * n
    return prods.mean(axis=0), prods.std(axis=0, ddof=1) / math.sqrt(reps)


METHODS = ("RQ", "BEL.s", "BEL.c", "CQR")


def method_acov(model, taus, method: str) -> np.ndarray:
    """Per-observation acov of a method on the full coefficient vector."""
    model = get_model(model)
    taus = as_levels(taus)
    if method in ("RQ", "BEL.s"):
        return information(model, taus).acov
    T = Parameterization.common_slope(taus.k, model.p).T
    if method == "BEL.c":
        red = information(model, taus, Parameterization.common_slope(taus.k, model.p)).acov
    elif method == "CQR":
        red = cqr_acov(model, taus)
    else:
        raise ContractError(f"unknown method {method!r}; known: {METHODS}")
    return T @ red @ T.T


def are_table(model, taus, methodA: str, methodB: str = "RQ") -> np.ndarray:
    """``(p+1) x k`` ratios ``acov_B / acov_A`` per coefficient and level."""
    model = get_model(model)
    taus = as_levels(taus)
    a = np.diag(method_acov(model, taus, methodA)).reshape(taus.k, model.p + 1)
    b = np.diag(method_acov(model, taus, methodB)).reshape(taus.k, model.p + 1)
    return (b / a).T


def are_rows(models, level_sets, methods, reference: str = "RQ"):
    """Rows ``(model, method, coefficient, tau, ratio)`` in Table-2 layout."""
    rows = []
    for m in models:
        spec = get_model(m)
        names = ("intercept",) + (spec.names or tuple(f"x{j}" for j in range(1, spec.p + 1)))
        for meth in methods:
            for taus in level_sets:
                levels = as_levels(taus)
                tab = are_table(spec, levels, meth, reference)
                for j in range(1, spec.p + 1):
                    for d, t in enumerate(levels):
                        rows.append((spec.label, f"{meth}/{reference}", names[j], float(t), float(tab[j, d])))
    return rows

"""Classical comparators: RQ, CQR and two working-likelihood samplers.

BDL uses the asymmetric Laplace working likelihood ``exp(-rho_tau(r)/s)``
with ``s`` fixed at the mean absolute residual of the median RQ fit; at
``tau = 0.5`` this is the Laplace density ``exp(-|r|/(2s))``. BTL uses the
normal likelihood with ``sigma`` fixed at the OLS residual standard
deviation.
"""
from __future__ import annotations

import numpy as np
from scipy.stats import norm

from .model import ContractError, Dataset, Parameterization
from .priors import PriorSpec
from .quantreg import FitResult, cqr_fit, rq_enumerate, rq_fit, rq_fit_levels, weighted_rq
from .sampler import Chain, SamplerConfig, SamplerError, default_scale, metropolis

__all__ = [
    "FitResult", "rq_fit", "rq_fit_levels", "cqr_fit", "rq_enumerate", "weighted_rq",
    "laplace_scale", "ols_sigma", "bdl_chain", "btl_chain",
]


def laplace_scale(data: Dataset) -> float:
    """Mean absolute residual of the median regression fit."""
    beta = rq_fit(data, 0.5).coef
    s = float(np.mean(np.abs(data.y - data.X @ beta)))
    if not s > 0:
        raise ContractError("Laplace scale is zero: the median fit interpolates every observation")
    return s


def ols_sigma(data: Dataset) -> float:
    beta, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    r = data.y - data.X @ beta
    return float(np.sqrt(r @ r / (data.n - data.p - 1)))


def _check_prior(prior: PriorSpec, data: Dataset):
    if prior.dim != data.p + 1:
        raise ContractError(f"prior dimension {prior.dim} does not match p+1={data.p + 1}")


def _start(data, tau, target, config):
    if config.init is not None:
        theta0 = np.asarray(config.init, dtype=float)
    else:
        theta0 = rq_fit(data, tau).coef
    if not np.isfinite(target(theta0)):
        raise SamplerError("initial state has non-finite log posterior")
    return theta0


def bdl_chain(data: Dataset, tau: float, prior: PriorSpec, config: SamplerConfig | None = None,
              seed: int = 0, scale: float | None = None) -> Chain:
    """Chain for the asymmetric-Laplace working posterior at level ``tau``."""
    _check_prior(prior, data)
    config = config or SamplerConfig()
    s = laplace_scale(data) if scale is None else float(scale)
    y, X = data.y, data.X

    def target(beta):
        r = y - X @ beta
        return -float(np.sum(r * (tau - (r < 0)))) / s + prior.log_density(beta)

    theta0 = _start(data, tau, target, config)
    step = config.init_scale if config.init_scale is not None else default_scale(data, Parameterization.full(1, data.p))
    chain = metropolis(target, theta0, config, seed, step, names=data.coef_names)
    chain.info["laplace_scale"] = s
    return chain


def btl_chain(data: Dataset, tau: float, prior: PriorSpec, config: SamplerConfig | None = None,
              seed: int = 0, sigma: float | None = None) -> Chain:
    """Chain for the normal-likelihood posterior of the ``tau``-quantile line.

    The sampled intercept is that of the conditional ``tau``-quantile,
    ``mean intercept + sigma * Phi^{-1}(tau)``.
    """
    _check_prior(prior, data)
    config = config or SamplerConfig()
    sigma = ols_sigma(data) if sigma is None else float(sigma)
    shift = sigma * norm.ppf(tau)
    y, X = data.y, data.X
    half_prec = 0.5 / sigma ** 2

    def target(beta):
        r = y - X @ beta + shift
        return -half_prec * float(r @ r) + prior.log_density(beta)

    theta0 = _start(data, tau, target, config)
    step = config.init_scale if config.init_scale is not None else default_scale(data, Parameterization.full(1, data.p))
    chain = metropolis(target, theta0, config, seed, step, names=data.coef_names)
    chain.info["sigma"] = sigma
    return chain


def btl_conjugate_posterior(data: Dataset, tau: float, prior_mean, prior_cov, sigma: float):
    """Closed-form Gaussian posterior of the BTL target under a normal prior."""
    P0 = np.linalg.inv(np.asarray(prior_cov, dtype=float))
    prec = P0 + data.X.T @ data.X / sigma ** 2
    cov = np.linalg.inv(prec)
    mean = cov @ (P0 @ np.asarray(prior_mean, dtype=float) + data.X.T @ (data.y + sigma * norm.ppf(tau)) / sigma ** 2)
    return mean, cov


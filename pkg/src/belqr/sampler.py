"""Random-walk Metropolis-Hastings on the EL quasi-posterior.

Proposal scales adapt during burn-in (Robbins-Monro on a global log-scale
toward the target acceptance rate, per-coordinate shape from the running
standard deviation) and are frozen afterwards, so the stored draws come from
a fixed symmetric kernel.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .el import ELEvaluator, log_el_ratio
from .model import COMMON_SLOPE, FULL, ContractError, Dataset, Parameterization, ParamVector, as_levels
from .priors import PriorSpec

log = logging.getLogger(__name__)


class SamplerError(RuntimeError):
    """Chain could not be started or run."""


@dataclass(frozen=True)
class SamplerConfig:
    total_iters: int = 25000
    burn_in: int = 5000
    target_acceptance: float = 0.234
    init: np.ndarray | None = None  # reduced coordinates; None means automatic
    adaptation: bool = True
    proposal: str = "diagonal"  # or "full" (adaptive covariance)
    init_scale: np.ndarray | None = None

    def __post_init__(self):
        if self.total_iters < 1 or self.burn_in < 0:
            raise ContractError("total_iters must be positive and burn_in non-negative")
        if self.burn_in >= self.total_iters:
            raise ContractError(f"burn_in ({self.burn_in}) must be smaller than total_iters ({self.total_iters})")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ContractError("target_acceptance must lie in (0, 1)")
        if self.proposal not in ("diagonal", "full"):
            raise ContractError(f"unknown proposal {self.proposal!r}")

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("total_iters", "burn_in", "target_acceptance", "adaptation", "proposal")}
        out["init"] = None if self.init is None else np.asarray(self.init).tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        d = dict(d)
        if d.get("init") is not None:
            d["init"] = np.asarray(d["init"], dtype=float)
        return cls(**d)


@dataclass
class Chain:
    samples: np.ndarray
    log_post: np.ndarray
    acceptance_rate: float
    seed: int
    proposal_scale_final: np.ndarray
    names: tuple[str, ...] = ()
    info: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    def to_csv(self, path) -> None:
        names = self.names or tuple(f"theta{j}" for j in range(self.samples.shape[1]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*names, "log_post"])
            for row, lp in zip(self.samples, self.log_post):
                w.writerow([repr(float(v)) for v in row] + [repr(float(lp))])


@dataclass(frozen=True)
class PosteriorSummary:
    mode: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


def metropolis(log_target: Callable[[np.ndarray], float], theta0, config: SamplerConfig, seed: int,
               init_scale=None, names=()) -> Chain:
    """Adaptive random-walk MH; returns the post-burn-in part of the chain."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
    theta = np.array(theta0, dtype=float)
    q = theta.size
    lp = float(log_target(theta))
    if not np.isfinite(lp):
        raise SamplerError("initial state has non-finite log posterior")
    shape = np.ones(q) if init_scale is None else np.asarray(init_scale, dtype=float).copy()
    log_s = math.log(2.38 / math.sqrt(q))
    full = config.proposal == "full"
    chol = np.diag(shape)

    S = config.total_iters - config.burn_in
    out = np.empty((S, q))
    out_lp = np.empty(S)
    accepted_post = 0
    # running moments for the shape estimate, collected from burn_in // 4 on
    start_stats = config.burn_in // 4
    cnt, mean, m2 = 0, np.zeros(q), np.zeros((q, q)) if full else np.zeros(q)
    block = 4096
    for t0 in range(0, config.total_iters, block):
        nb = min(block, config.total_iters - t0)
        eps = rng.standard_normal((nb, q))
        logu = np.log(rng.random(nb))
        for b in range(nb):
            t = t0 + b
            burning = t < config.burn_in
            step = chol @ eps[b] if full else shape * eps[b]
            cand = theta + math.exp(log_s) * step
            lp_c = float(log_target(cand))
            acc = lp_c > -math.inf and logu[b] < lp_c - lp
            if acc:
                theta, lp = cand, lp_c
            if burning and config.adaptation:
                a = 1.0 if acc else min(1.0, math.exp(lp_c - lp)) if lp_c > -math.inf else 0.0
                log_s += (a - config.target_acceptance) / (t + 1) ** 0.6
                if t >= start_stats:
                    cnt += 1
                    delta = theta - mean
                    mean += delta / cnt
                    if full:
                        m2 += np.outer(delta, theta - mean)
                    else:
                        m2 += delta * (theta - mean)
                    if cnt >= max(2 * q, 50) and cnt % 25 == 0:
                        if full:
                            cov = m2 / (cnt - 1)
                            cov += 1e-10 * np.trace(cov) / q * np.eye(q)
                            try:
                                chol = np.linalg.cholesky(cov)
                            except np.linalg.LinAlgError:
                                pass
                        else:
                            sd = np.sqrt(m2 / (cnt - 1))
                            if np.all(sd > 0):
                                shape = sd
            if not burning:
                i = t - config.burn_in
                out[i] = theta
                out_lp[i] = lp
                accepted_post += acc
    final = math.exp(log_s) * (np.sqrt(np.sum(chol ** 2, axis=1)) if full else shape)
    return Chain(out, out_lp, accepted_post / S, int(seed), final, tuple(names))


def _prior_on_theta(prior: PriorSpec, par: Parameterization) -> bool:
    if prior.dim == par.q:
        return True
    if prior.dim == par.full_dim:
        return False
    raise ContractError(f"prior dimension {prior.dim} matches neither q={par.q} nor k(p+1)={par.full_dim}")


def log_posterior(data: Dataset, zeta: ParamVector, taus, prior: PriorSpec) -> float:
    """``log R(zeta) + log prior``; ``-inf`` when the EL ratio is infeasible."""
    par = zeta.parameterization
    on_theta = _prior_on_theta(prior, par)
    res = log_el_ratio(data, zeta, taus)
    if not res.converged:
        log.debug("EL %s: %s", res.status.value, res.diagnostic)
        return -math.inf
    return res.log_ratio + prior.log_density(zeta.theta if on_theta else zeta.expand())


def make_target(data: Dataset, taus, prior: PriorSpec, par: Parameterization, include_el: bool = True):
    taus = as_levels(taus)
    on_theta = _prior_on_theta(prior, par)
    T = par.T
    ev = ELEvaluator(data.y, data.X, taus.taus)

    def target(theta):
        zeta = T @ theta
        lp = prior.log_density(theta if on_theta else zeta)
        if not include_el:
            return lp
        lr, ok = ev(zeta)
        return lr + lp if ok else -math.inf

    return target


def modify_intercepts(data: Dataset, taus, slope_estimates) -> np.ndarray:
    """Per-level sample quantile of ``y - X_S b_d`` (left-continuous inverse)."""
    taus = as_levels(taus)
    slopes = np.asarray(slope_estimates, dtype=float).reshape(taus.k, data.p)
    n = data.n
    out = np.empty(taus.k)
    for d, tau in enumerate(taus):
        r = np.sort(data.y - data.X[:, 1:] @ slopes[d])
        idx = min(max(math.ceil(n * tau - 1e-9), 1), n)
        out[d] = r[idx - 1]
    return out


def initial_state(data: Dataset, taus, par: Parameterization, target, rng, tries: int = 500) -> np.ndarray:
    """First EL-feasible point among RQ and CQR based starts, then a random search.

    Candidates in order: per-level RQ mapped into ``par``, the same with
    modified intercepts, the CQR fit with and without modified intercepts,
    and each level's RQ slopes shared across levels with modified intercepts.
    Failing those, a 1% jitter of the modified RQ start; last, slopes are perturbed around the CQR start on the posterior
    scale, each draw getting modified intercepts.
    """
    from .quantreg import cqr_fit, rq_fit_levels

    taus = as_levels(taus)

    def with_modified(beta):
        blocks = np.array(beta, dtype=float).reshape(taus.k, data.p + 1)
        blocks[:, 0] = modify_intercepts(data, taus, blocks[:, 1:])
        return par.reduce(blocks.reshape(-1))

    rq = rq_fit_levels(data, taus).beta
    theta = par.reduce(rq.reshape(-1))
    if np.isfinite(target(theta)):
        return theta
    candidates = [lambda: with_modified(par.expand(theta))]
    try:
        cqr = cqr_fit(data, taus).beta
    except ContractError:
        cqr = None
    if cqr is not None:
        candidates += [lambda: par.reduce(cqr.reshape(-1)), lambda: with_modified(cqr)]
    for d in range(taus.k):
        candidates.append(lambda d=d: with_modified(np.column_stack([rq[:, 0], np.tile(rq[d, 1:], (taus.k, 1))])))
    for make in candidates:
        cand = make()
        if np.isfinite(target(cand)):
            return cand
    theta = candidates[0]()
    for _ in range(100):
        cand = theta * (1.0 + rng.uniform(-0.01, 0.01, theta.size)) + rng.uniform(-0.01, 0.01, theta.size)
        if np.isfinite(target(cand)):
            return cand
    base = par.expand(par.reduce(cqr.reshape(-1)) if cqr is not None else theta)
    scale = par.expand(default_scale(data, par))
    for _ in range(tries):
        cand = base + rng.normal(size=base.size) * scale * rng.choice([0.1, 0.3, 1.0])
        cand = with_modified(par.expand(par.reduce(cand)))
        if np.isfinite(target(cand)):
            return cand
    raise SamplerError(f"no EL-feasible starting point after jitter and {tries} random tries")


def default_scale(data: Dataset, par: Parameterization) -> np.ndarray:
    """Rough per-coordinate posterior scale, ``sd(y) / (sqrt(n) sd(x_j))``."""
    sd_y = data.y.std() or 1.0
    col_sd = np.concatenate([[1.0], data.X[:, 1:].std(axis=0)])
    col_sd[col_sd == 0] = 1.0
    full = np.tile(sd_y / (math.sqrt(data.n) * col_sd), par.k)
    # reduced scale: average the full-coordinate scales that load on theta_j
    T = np.abs(par.T)
    return (T.T @ full) / np.maximum(T.sum(axis=0), 1e-12)


def run_chain(data: Dataset, taus, prior: PriorSpec, parameterization: Parameterization | None = None,
              config: SamplerConfig | None = None, seed: int = 0, include_el: bool = True) -> Chain:
    taus = as_levels(taus)
    par = parameterization or Parameterization.full(taus.k, data.p)
    if par.k != taus.k or par.p != data.p:
        raise ContractError(f"parameterization (k={par.k}, p={par.p}) does not match data p={data.p}, k={taus.k}")
    config = config or SamplerConfig()
    target = make_target(data, taus, prior, par, include_el)
    init_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    if config.init is not None:
        theta0 = np.asarray(config.init, dtype=float)
        if theta0.size != par.q:
            raise ContractError(f"init has length {theta0.size}, expected {par.q}")
        if not np.isfinite(target(theta0)):
            raise SamplerError("supplied initial state has non-finite log posterior")
    else:
        theta0 = initial_state(data, taus, par, target, init_rng)
    scale = config.init_scale if config.init_scale is not None else default_scale(data, par)
    return metropolis(target, theta0, config, seed, scale, names=theta_names(data, taus, par))


def theta_names(data: Dataset, taus, par: Parameterization) -> tuple[str, ...]:
    taus = as_levels(taus)
    if par.kind == FULL:
        return tuple(f"{c}@{t:g}" for t in taus for c in data.coef_names)
    if par.kind == COMMON_SLOPE:
        return tuple(f"{data.coef_names[0]}@{t:g}" for t in taus) + tuple(data.coef_names[1:])
    return tuple(f"theta{j}" for j in range(par.q))


def summarize(chain: Chain, level: float = 0.95) -> PosteriorSummary:
    if chain.size == 0:
        raise ContractError("empty chain")
    if not 0.0 < level < 1.0:
        raise ContractError("level must lie in (0, 1)")
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(chain.samples, [a, 1.0 - a], axis=0)
    mode = chain.samples[int(np.argmax(chain.log_post))].copy()
    return PosteriorSummary(mode, chain.samples.mean(axis=0), lo, hi, level)


def point_estimate(chain: Chain, data: Dataset, taus, par: Parameterization) -> np.ndarray:
    """Posterior mode with modified intercepts, as ``k x (p+1)`` blocks."""
    taus = as_levels(taus)
    mode = chain.samples[int(np.argmax(chain.log_post))]
    blocks = par.blocks(mode)
    blocks[:, 0] = modify_intercepts(data, taus, blocks[:, 1:])
    return blocks


def estimate_information(chain: Chain, J0n) -> np.ndarray:
    """EL information from the chain: ``inv(cov(chain)) - J0n``."""
    cov = np.atleast_2d(np.cov(chain.samples, rowvar=False))
    J0n = np.atleast_2d(np.asarray(J0n, dtype=float))
    if J0n.shape != cov.shape:
        raise ContractError(f"J0n has shape {J0n.shape}, chain covariance {cov.shape}")
    w = np.linalg.eigvalsh(cov)
    if w[0] <= 1e-14 * max(w[-1], 1e-300):
        raise ContractError("chain sample covariance is singular")
    info = np.linalg.inv(cov) - J0n
    info = (info + info.T) / 2.0
    vals, vecs = np.linalg.eigh(info)
    if vals.min() < 0:
        warnings.warn(f"information estimate has negative eigenvalues (min {vals.min():.3g}); floored at 0",
                      RuntimeWarning, stacklevel=2)
        vals = np.maximum(vals, 0.0)
        info = (vecs * vals) @ vecs.T
    return info

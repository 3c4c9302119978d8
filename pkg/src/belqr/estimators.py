"""Named estimation methods with a common calling convention.

Every method takes ``(data, taus, seed, options)`` and returns a
``MethodResult`` holding a ``k x (p+1)`` point estimate and, for the
Bayesian methods, equal-tailed intervals on the same coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import baselines
from .model import ContractError, Dataset, Parameterization, as_levels
from .priors import PriorSpec, difference_prior, independent_normal
from .sampler import Chain, SamplerConfig, point_estimate, run_chain

# slope-difference scales used when none are configured (k = 3, p = 2)
BELN_DIFF_SD = ((0.4, 0.1), (1.0, 0.1))
BELT_DIFF_SCALE = ((0.02, 0.14), (0.35, 1.16))


@dataclass
class MethodOptions:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    level: float = 0.95
    prior: PriorSpec | dict | None = None
    intercept_mean: float = 0.0
    slope_mean: float = 1.0
    prior_sd: float = 100.0
    diff_scales: list | None = None
    df: float = 3.0
    shared_columns: tuple[int, ...] | None = None
    keep_chains: bool = True

    @classmethod
    def from_dict(cls, d: dict | None) -> "MethodOptions":
        d = dict(d or {})
        if "sampler" in d:
            d["sampler"] = SamplerConfig.from_dict(d["sampler"])
        if "shared_columns" in d and d["shared_columns"] is not None:
            d["shared_columns"] = tuple(d["shared_columns"])
        return cls(**d)


@dataclass
class MethodResult:
    method: str
    taus: np.ndarray
    beta: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    mean: np.ndarray | None = None
    chains: list[Chain] = field(default_factory=list)
    status: str = "ok"


def _prior(opts: MethodOptions, default: PriorSpec) -> PriorSpec:
    if opts.prior is None:
        return default
    if isinstance(opts.prior, dict):
        return PriorSpec.from_dict(opts.prior)
    return opts.prior


def _flat_normal(par: Parameterization, opts: MethodOptions) -> PriorSpec:
    """Independent normals, intercept and slope means differing, on theta."""
    # a reduced coordinate is an intercept when every row it loads on is one
    rows = [np.flatnonzero(par.T[:, j]) for j in range(par.q)]
    is_int = np.array([np.all(r % (par.p + 1) == 0) for r in rows])
    means = np.where(is_int, opts.intercept_mean, opts.slope_mean)
    return independent_normal(means, opts.prior_sd)


def _diff_scales(opts: MethodOptions, k: int, p: int, default):
    if opts.diff_scales is not None:
        return np.asarray(opts.diff_scales, dtype=float)
    if (k, p) == (3, 2):
        return np.asarray(default, dtype=float)
    raise ContractError(f"difference-prior scales must be configured for k={k}, p={p}")


def _bel(data: Dataset, taus, seed: int, opts: MethodOptions, par: Parameterization, prior: PriorSpec,
         name: str) -> MethodResult:
    chain = run_chain(data, taus, prior, par, opts.sampler, seed)
    full = chain.samples @ par.T.T
    a = (1.0 - opts.level) / 2.0
    lo, hi = np.quantile(full, [a, 1.0 - a], axis=0)
    shape = (par.k, par.p + 1)
    return MethodResult(
        name, as_levels(taus).taus, point_estimate(chain, data, taus, par),
        lo.reshape(shape), hi.reshape(shape), full.mean(axis=0).reshape(shape),
        [chain] if opts.keep_chains else [],
    )


def bel_s(data, taus, seed, opts):
    """Single-level BEL: an independent chain at each level.

    A supplied prior must have dimension ``p + 1`` and is used at every
    level; joint priors across levels belong to BEL.n.
    """
    taus = as_levels(taus)
    par = Parameterization.full(1, data.p)
    prior = _prior(opts, _flat_normal(par, opts))
    if prior.dim != par.q:
        raise ContractError(f"BEL.s prior must have dimension p+1 = {par.q}, got {prior.dim}; use BEL.n for joint priors")
    seeds = np.random.SeedSequence(seed).generate_state(taus.k, np.uint64)
    fits = [_bel(data, [t], int(s), opts, par, prior, "BEL.s") for t, s in zip(taus, seeds)]
    stack = lambda attr: np.vstack([getattr(f, attr) for f in fits])  # noqa: E731
    return MethodResult("BEL.s", taus.taus, stack("beta"), stack("lower"), stack("upper"), stack("mean"),
                        [c for f in fits for c in f.chains])


def bel_c(data, taus, seed, opts):
    taus = as_levels(taus)
    par = Parameterization.common_slope(taus.k, data.p)
    return _bel(data, taus, seed, opts, par, _prior(opts, _flat_normal(par, opts)), "BEL.c")


def bel_z(data, taus, seed, opts):
    taus = as_levels(taus)
    shared = opts.shared_columns or (data.p,)
    par = Parameterization.shared(taus.k, data.p, shared)
    return _bel(data, taus, seed, opts, par, _prior(opts, _flat_normal(par, opts)), "BEL.z")


def bel_n(data, taus, seed, opts):
    taus = as_levels(taus)
    par = Parameterization.full(taus.k, data.p)
    if opts.prior is not None:
        return _bel(data, taus, seed, opts, par, _prior(opts, None), "BEL.n")
    default = difference_prior(taus.k, data.p, _diff_scales(opts, taus.k, data.p, BELN_DIFF_SD), "normal",
                               intercept_mean=opts.intercept_mean, intercept_sd=opts.prior_sd,
                               slope_mean=opts.slope_mean, slope_sd=opts.prior_sd)
    return _bel(data, taus, seed, opts, par, default, "BEL.n")


def bel_t(data, taus, seed, opts):
    taus = as_levels(taus)
    par = Parameterization.full(taus.k, data.p)
    if opts.prior is not None:
        return _bel(data, taus, seed, opts, par, _prior(opts, None), "BEL.t")
    default = difference_prior(taus.k, data.p, _diff_scales(opts, taus.k, data.p, BELT_DIFF_SCALE), "t",
                               df=opts.df, intercept_mean=opts.intercept_mean, intercept_sd=opts.prior_sd,
                               slope_mean=opts.slope_mean, slope_sd=opts.prior_sd)
    return _bel(data, taus, seed, opts, par, default, "BEL.t")


def rq(data, taus, seed, opts):
    taus = as_levels(taus)
    fit = baselines.rq_fit_levels(data, taus)
    return MethodResult("RQ", taus.taus, fit.beta, status=fit.status)


def cqr(data, taus, seed, opts):
    taus = as_levels(taus)
    fit = baselines.cqr_fit(data, taus)
    return MethodResult("CQR", taus.taus, fit.beta, status=fit.status)


def _working(chain_fn, name):
    def method(data, taus, seed, opts):
        taus = as_levels(taus)
        par = Parameterization.full(1, data.p)
        prior = _prior(opts, _flat_normal(par, opts))
        seeds = np.random.SeedSequence(seed).generate_state(taus.k, np.uint64)
        chains = [chain_fn(data, t, prior, opts.sampler, int(s)) for t, s in zip(taus, seeds)]
        a = (1.0 - opts.level) / 2.0
        lo = np.array([np.quantile(c.samples, a, axis=0) for c in chains])
        hi = np.array([np.quantile(c.samples, 1.0 - a, axis=0) for c in chains])
        mean = np.array([c.samples.mean(axis=0) for c in chains])
        return MethodResult(name, taus.taus, mean.copy(), lo, hi, mean, chains if opts.keep_chains else [])

    return method


METHODS = {
    "RQ": rq,
    "CQR": cqr,
    "BEL.s": bel_s,
    "BEL.c": bel_c,
    "BEL.n": bel_n,
    "BEL.t": bel_t,
    "BEL.z": bel_z,
    "BTL": _working(baselines.btl_chain, "BTL"),
    "BDL": _working(baselines.bdl_chain, "BDL"),
}


def estimate(method: str, data: Dataset, taus, seed: int = 0, options: MethodOptions | dict | None = None) -> MethodResult:
    try:
        fn = METHODS[method]
    except KeyError:
        raise ContractError(f"unknown method {method!r}; known: {sorted(METHODS)}") from None
    opts = options if isinstance(options, MethodOptions) else MethodOptions.from_dict(options)
    return fn(data, taus, int(seed), opts)

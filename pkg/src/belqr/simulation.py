"""Simulation experiments: interval coverage, n x MSE and split validation.

Replications get independent seeds spawned from the master seed, so results
do not depend on the number of worker processes (``BELQR_WORKERS``).
"""
from __future__ import annotations

import csv
import json
import logging
import math
import operator
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .asymptotics import ModelSpec, get_model
from .diagnostics import ess
from .estimators import MethodOptions, estimate
from .model import ContractError, Dataset, as_levels
from .sampler import SamplerConfig, SamplerError

log = logging.getLogger(__name__)


def generate(model, n: int, seed) -> Dataset:
    if n < 10:
        raise ContractError(f"n must be at least 10, got {n}")
    return get_model(model).sample(int(n), np.random.default_rng(seed))


@dataclass(frozen=True)
class TrueParams:
    beta: np.ndarray  # k x (p+1)
    adjusted: np.ndarray  # a(tau) per level


def true_params(model, taus) -> TrueParams:
    spec = get_model(model)
    return TrueParams(spec.true_beta(taus), spec.adjusted_intercepts(taus))


def normalized_difference(O: int, tau: float, n: int) -> float:
    """``(O - E) / sqrt(tau (1 - tau) n)`` with ``E = n (1 - tau)``."""
    if n < 1:
        raise ContractError(f"n must be positive, got {n}")
    if not 0 <= O <= n:
        raise ContractError(f"count O={O} outside [0, {n}]")
    if not 0 < tau < 1:
        raise ContractError("tau must lie in (0, 1)")
    return (O - n * (1.0 - tau)) / math.sqrt(tau * (1.0 - tau) * n)


@dataclass
class ExperimentReport:
    """Rows of ``(method, coefficient, statistic, value, se)`` plus metadata."""

    kind: str
    master_seed: int
    replications: int
    rows: list[dict]
    failures: dict[str, int] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    extra_columns: tuple[str, ...] = ()

    def value(self, method: str, coefficient: str, statistic: str, **match) -> float:
        return self.cell(method, coefficient, statistic, **match)["value"]

    def cell(self, method: str, coefficient: str, statistic: str, **match) -> dict:
        for r in self.rows:
            if (r["method"], r["coefficient"], r["statistic"]) == (method, coefficient, statistic) and all(
                    r.get(k) == v for k, v in match.items()):
                return r
        raise KeyError((method, coefficient, statistic, match))

    def columns(self) -> list[str]:
        return ["method", *self.extra_columns, "coefficient", "statistic", "value", "se"]

    def to_csv(self, path) -> None:
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def summary(self) -> dict:
        return {
            "kind": self.kind, "master_seed": self.master_seed, "replications": self.replications,
            "failures": self.failures, "config": self.config,
            "rows": [{c: r[c] for c in self.columns()} for r in self.rows],
        }

    def display(self) -> str:
        """Three-decimal text table."""
        cols = self.columns()
        lines = ["\t".join(cols)]
        for r in self.rows:
            lines.append("\t".join(f"{r[c]:.3f}" if isinstance(r[c], float) else str(r[c]) for c in cols))
        return "\n".join(lines)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("BELQR_WORKERS", "1")))
    except ValueError:
        return 1


def _map(fn, jobs):
    workers = _workers()
    if workers == 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _rep_seeds(seed: int, reps: int):
    """Per replication: a data seed and one method seed per method slot."""
    return [s.generate_state(8, np.uint64).tolist() for s in np.random.SeedSequence(seed).spawn(reps)]


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


# ---------------------------------------------------------------- coverage

@dataclass
class CoverageConfig:
    n: int = 400
    reps: int = 200
    methods: tuple[str, ...] = ("BEL.s", "BTL", "BDL")
    seed: int = 0
    tau: float = 0.5
    model: str = "CoverageModel"
    level: float = 0.95
    prior_sd: float = 100.0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "CoverageConfig":
        d = dict(d)
        if "sampler" in d:
            d["sampler"] = SamplerConfig.from_dict(d["sampler"])
        if "methods" in d:
            d["methods"] = tuple(d["methods"])
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sampler"] = self.sampler.to_dict()
        out["methods"] = list(self.methods)
        return out


def _coverage_rep(job):
    cfg, rep, seeds = job
    spec = get_model(cfg.model)
    data = spec.sample(cfg.n, np.random.default_rng(seeds[0]))
    truth = spec.true_beta([cfg.tau])[0]
    opts = MethodOptions(sampler=cfg.sampler, level=cfg.level, intercept_mean=0.0, slope_mean=0.0,
                         prior_sd=cfg.prior_sd, keep_chains=False)
    out = {}
    for slot, m in enumerate(cfg.methods):
        try:
            res = estimate(m, data, [cfg.tau], seeds[1 + slot], opts)
        except (SamplerError, ContractError) as exc:
            log.warning("replication %d, %s failed: %s", rep, m, exc)
            out[m] = None
            continue
        lo, hi = res.lower[0], res.upper[0]
        ok = np.isfinite(lo) & np.isfinite(hi)
        out[m] = (ok & (lo <= truth) & (truth <= hi), np.where(ok, hi - lo, np.nan))
    return out


def coverage_experiment(config: CoverageConfig | dict) -> ExperimentReport:
    cfg = config if isinstance(config, CoverageConfig) else CoverageConfig.from_dict(config)
    if len(cfg.methods) > 7:
        raise ContractError("at most 7 methods per experiment")
    spec = get_model(cfg.model)
    names = ("intercept",) + spec.names
    jobs = [(cfg, r, s) for r, s in enumerate(_rep_seeds(cfg.seed, cfg.reps))]
    results = _map(_coverage_rep, jobs)
    rows, failures = [], {}
    for m in cfg.methods:
        ok = [r[m] for r in results if r[m] is not None]
        failures[m] = cfg.reps - len(ok)
        for j, name in enumerate(names):
            cov = [float(c[0][j]) for c in ok]
            lens = [c[1][j] for c in ok if np.isfinite(c[1][j])]
            pc, _ = _mean_se(cov)
            se_c = math.sqrt(pc * (1 - pc) / len(cov)) if cov else math.nan
            ml, se_l = _mean_se(lens)
            rows.append(dict(method=m, coefficient=name, statistic="coverage", value=pc, se=se_c))
            rows.append(dict(method=m, coefficient=name, statistic="length", value=ml, se=se_l))
    return ExperimentReport("coverage", cfg.seed, cfg.reps, rows, failures, cfg.to_dict())


# ---------------------------------------------------------------------- mse

@dataclass
class MSEConfig:
    model: str = "M1"
    n: int = 100
    reps: int = 100
    taus: tuple[float, ...] = (0.9, 0.925, 0.95)
    methods: tuple[str, ...] = ("BEL.s", "BEL.n", "BEL.c", "CQR", "RQ")
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    options: dict = field(default_factory=dict)  # per-method MethodOptions overrides

    @classmethod
    def from_dict(cls, d: dict) -> "MSEConfig":
        d = dict(d)
        if "sampler" in d:
            d["sampler"] = SamplerConfig.from_dict(d["sampler"])
        for key in ("taus", "methods"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sampler"] = self.sampler.to_dict()
        out["taus"] = list(self.taus)
        out["methods"] = list(self.methods)
        return out


def coefficient_labels(spec: ModelSpec, taus) -> list[str]:
    """``a(tau)`` per level, then each slope per level."""
    taus = as_levels(taus)
    labels = [f"a({t:g})" for t in taus]
    for t in taus:
        labels += [f"b_{c}({t:g})" for c in spec.names]
    return labels


def _flatten(beta, point):
    """Adjusted intercepts followed by level-major slopes."""
    return np.concatenate([beta @ point, beta[:, 1:].reshape(-1)])


def _mse_rep(job):
    cfg, rep, seeds = job
    spec = get_model(cfg.model)
    data = spec.sample(cfg.n, np.random.default_rng(seeds[0]))
    point = spec.adjustment_point(data.X)
    truth = _flatten(spec.true_beta(cfg.taus), point)
    out = {}
    for slot, m in enumerate(cfg.methods):
        opts = dict(cfg.options.get(m, {}))
        opts.setdefault("keep_chains", False)
        opts = MethodOptions.from_dict(opts)
        opts.sampler = cfg.sampler if "sampler" not in cfg.options.get(m, {}) else opts.sampler
        try:
            res = estimate(m, data, cfg.taus, seeds[1 + slot], opts)
        except (SamplerError, ContractError) as exc:
            log.warning("replication %d, %s failed: %s", rep, m, exc)
            out[m] = None
            continue
        out[m] = _flatten(res.beta, point) - truth
    return out


def mse_experiment(config: MSEConfig | dict) -> ExperimentReport:
    cfg = config if isinstance(config, MSEConfig) else MSEConfig.from_dict(config)
    if len(cfg.methods) > 7:
        raise ContractError("at most 7 methods per experiment")
    spec = get_model(cfg.model)
    labels = coefficient_labels(spec, cfg.taus)
    jobs = [(cfg, r, s) for r, s in enumerate(_rep_seeds(cfg.seed, cfg.reps))]
    results = _map(_mse_rep, jobs)
    rows, failures = [], {}
    for m in cfg.methods:
        errs = np.array([r[m] for r in results if r[m] is not None])
        failures[m] = cfg.reps - len(errs)
        for j, name in enumerate(labels):
            if len(errs) == 0:
                continue
            mse, se = _mean_se(cfg.n * errs[:, j] ** 2)
            bias, bse = _mean_se(errs[:, j])
            rows.append(dict(method=m, coefficient=name, statistic="nMSE", value=mse, se=se))
            rows.append(dict(method=m, coefficient=name, statistic="bias", value=bias, se=bse))
    return ExperimentReport("mse", cfg.seed, cfg.reps, rows, failures, cfg.to_dict())


# ---------------------------------------------------------- split validation

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
        "==": operator.eq, "!=": operator.ne}


@dataclass(frozen=True)
class Subset:
    """Column predicate on test covariates; ``value`` may be ``"median"``."""

    name: str
    column: int | str
    op: str
    value: float | str

    @classmethod
    def from_dict(cls, d: dict) -> "Subset":
        return cls(d["name"], d["column"], d["op"], d["value"])

    def mask(self, data: Dataset) -> np.ndarray:
        if self.op not in _OPS:
            raise ContractError(f"subset {self.name!r}: unknown operator {self.op!r}")
        if isinstance(self.column, str):
            names = data.coef_names
            if self.column not in names:
                raise ContractError(f"subset {self.name!r}: unknown column {self.column!r}; have {names}")
            j = names.index(self.column)
        else:
            j = int(self.column)
        col = data.X[:, j]
        value = float(np.median(col)) if self.value == "median" else float(self.value)
        return _OPS[self.op](col, value)


def split_validate(data: Dataset, taus, methods, n_splits: int = 3, seed: int = 0,
                   subsets=(), options: dict | None = None) -> ExperimentReport:
    """Fit on a random half, count test exceedances of predicted quantiles."""
    taus = as_levels(taus)
    if data.n < 2 * (data.p + 2):
        raise ContractError(f"need n >= 2(p+2) = {2 * (data.p + 2)} for a split, got {data.n}")
    subsets = [s if isinstance(s, Subset) else Subset.from_dict(s) for s in subsets]
    options = options or {}
    half = data.n // 2
    rows, failures = [], {m: 0 for m in methods}
    per_split = {}
    for split, ss in enumerate(np.random.SeedSequence(seed).spawn(n_splits)):
        state = ss.generate_state(8, np.uint64).tolist()
        perm = np.random.default_rng(state[0]).permutation(data.n)
        fit, test = data.subset(np.sort(perm[:half])), data.subset(np.sort(perm[half:]))
        groups = [("all", np.ones(test.n, bool))] + [(s.name, s.mask(test)) for s in subsets]
        for slot, m in enumerate(methods):
            opts = dict(options.get(m, {}))
            opts.setdefault("keep_chains", True)
            try:
                res = estimate(m, fit, taus, state[1 + slot], opts)
            except (SamplerError, ContractError) as exc:
                log.warning("split %d, %s failed: %s", split, m, exc)
                failures[m] += 1
                continue
            pred = test.X @ res.beta.T  # n_test x k
            for gname, mask in groups:
                for d, t in enumerate(taus):
                    n_g = int(mask.sum())
                    if n_g == 0:
                        continue
                    O = int(np.sum(test.y[mask] > pred[mask, d]))
                    dval = normalized_difference(O, t, n_g)
                    per_split.setdefault((m, gname, float(t)), []).append(dval)
                    rows.append(dict(method=m, split=split + 1, subset=gname, coefficient=f"q({t:g})",
                                     statistic="d", value=dval, se=1.0))
            for c in res.chains:
                e = [ess(c.samples[:, j]) for j in range(c.samples.shape[1])]
                rows.append(dict(method=m, split=split + 1, subset="all", coefficient="chain",
                                 statistic="mean_ess", value=float(np.mean(e)), se=0.0))
    for (m, gname, t), vals in per_split.items():
        mean, se = _mean_se(vals)
        rows.append(dict(method=m, split=0, subset=gname, coefficient=f"q({t:g})", statistic="mean_d",
                         value=mean, se=se if len(vals) > 1 else 1.0))
    config = {"taus": taus.taus.tolist(), "methods": list(methods), "n_splits": n_splits, "seed": seed,
              "subsets": [asdict(s) for s in subsets], "options": options}
    return ExperimentReport("validate", seed, n_splits, rows, failures, config, ("split", "subset"))

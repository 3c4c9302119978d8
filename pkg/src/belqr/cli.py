"""Command-line interface.

Every subcommand is translated into a JSON run configuration, echoed to
``<out>/config.json``; ``belqr run <out>/config.json`` reproduces the run.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import are_table, get_model
from .el import BACKEND
from .estimators import METHODS, MethodOptions, estimate
from .model import ContractError, Dataset, as_levels
from .simulation import CoverageConfig, MSEConfig, coverage_experiment, mse_experiment, split_validate

log = logging.getLogger("belqr")

COMMANDS = ("fit", "simulate", "validate", "asymptotics")


class DataError(ContractError):
    """Malformed input file."""


def load_dataset(path, response_column: str, covariate_columns) -> Dataset:
    """Read a headed CSV; the design gets an intercept and keeps column order."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: file is empty")
        header = [h.strip() for h in header]
        wanted = [response_column, *covariate_columns]
        for c in wanted:
            if c not in header:
                raise DataError(f"{path}: missing column {c!r}; available: {header}")
        idx = [header.index(c) for c in wanted]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            vals = []
            for c, j in zip(wanted, idx):
                cell = row[j].strip() if j < len(row) else ""
                if cell == "":
                    raise DataError(f"{path}: row {line_no}, column {c!r}: blank cell")
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {line_no}, column {c!r}: non-numeric value {cell!r}") from None
                if not np.isfinite(v):
                    raise DataError(f"{path}: row {line_no}, column {c!r}: non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows)
    return Dataset.from_covariates(arr[:, 0], arr[:, 1:], tuple(covariate_columns))


def _fmt(v) -> str:
    return repr(float(v))


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _load_data(cfg):
    d = cfg.get("data") or {}
    if "path" in d:
        return load_dataset(d["path"], d.get("response", "y"), d.get("covariates", []))
    if "model" in d:
        from .simulation import generate
        return generate(d["model"], int(d["n"]), int(d.get("seed", cfg["seed"])))
    raise ContractError("config needs data.path (CSV) or data.model (simulated)")


def _method_options(cfg, method):
    opts = dict(cfg.get("options", {}).get(method, {}))
    if "sampler" in cfg and "sampler" not in opts:
        opts["sampler"] = cfg["sampler"]
    return MethodOptions.from_dict(opts)


def _run_fit(cfg, out: Path):
    data = _load_data(cfg)
    taus = as_levels(cfg["taus"])
    method = cfg.get("method", "BEL.s")
    res = estimate(method, data, taus, cfg["seed"], _method_options(cfg, method))
    rows, disp = [], ["tau\tcoefficient\testimate\tmean\tlower\tupper"]
    for d, t in enumerate(taus):
        for j, c in enumerate(data.coef_names):
            extra = [res.mean[d, j], res.lower[d, j], res.upper[d, j]] if res.lower is not None else [np.nan] * 3
            rows.append([_fmt(t), c, _fmt(res.beta[d, j]), *map(_fmt, extra)])
            disp.append("\t".join([f"{t:g}", c] + [f"{v:.3f}" for v in [res.beta[d, j], *extra]]))
    _write_rows(out / "estimates.csv", ["tau", "coefficient", "estimate", "mean", "lower", "upper"], rows)
    (out / "estimates.txt").write_text("\n".join(disp) + "\n")
    if cfg.get("save_chains"):
        for i, ch in enumerate(res.chains):
            ch.to_csv(out / f"chain{i}.csv")
    chain_stats = [{"acceptance_rate": c.acceptance_rate, "seed": c.seed,
                    "proposal_scale_final": c.proposal_scale_final.tolist()} for c in res.chains]
    (out / "chains.json").write_text(json.dumps(chain_stats, indent=2, sort_keys=True) + "\n")
    return "\n".join(disp)


def _run_simulate(cfg, out: Path):
    kind = cfg.get("experiment", "coverage")
    exp = dict(cfg.get("experiment_config", {}))
    exp.setdefault("seed", cfg["seed"])
    if "sampler" in cfg:
        exp.setdefault("sampler", cfg["sampler"])
    if kind == "coverage":
        rep = coverage_experiment(CoverageConfig.from_dict(exp))
        methods = rep.config["methods"]
        names = sorted({r["coefficient"] for r in rep.rows}, key=[r["coefficient"] for r in rep.rows].index)
        header = ["n", "coefficient"] + [f"coverage_{m}" for m in methods] + [f"length_{m}" for m in methods]
        rows = []
        for c in names:
            cov = [_fmt(rep.value(m, c, "coverage")) for m in methods]
            ln = [_fmt(rep.value(m, c, "length")) for m in methods]
            rows.append([rep.config["n"], c, *cov, *ln])
        _write_rows(out / "table.csv", header, rows)
    elif kind == "mse":
        rep = mse_experiment(MSEConfig.from_dict(exp))
        labels = sorted({r["coefficient"] for r in rep.rows}, key=[r["coefficient"] for r in rep.rows].index)
        rows = []
        for m in rep.config["methods"]:
            rows.append([m, "nMSE", *(_fmt(rep.value(m, c, "nMSE")) for c in labels)])
            rows.append([m, "se", *(_fmt(rep.cell(m, c, "nMSE")["se"]) for c in labels)])
        _write_rows(out / "table.csv", ["method", "row", *labels], rows)
    else:
        raise ContractError(f"unknown experiment {kind!r}; use coverage or mse")
    rep.to_csv(out / "report.csv")
    rep.to_json(out / "report.json")
    (out / "report.txt").write_text(rep.display() + "\n")
    return rep.display()


def _run_validate(cfg, out: Path):
    data = _load_data(cfg)
    methods = cfg.get("methods", ["RQ", "BEL.s"])
    options = {m: _method_options(cfg, m) for m in methods}
    options = {m: o.__dict__ | {"sampler": o.sampler.to_dict()} for m, o in options.items()}
    rep = split_validate(data, cfg["taus"], methods, int(cfg.get("n_splits", 3)), cfg["seed"],
                         cfg.get("subsets", []), options)
    rep.to_csv(out / "report.csv")
    rep.to_json(out / "report.json")
    (out / "report.txt").write_text(rep.display() + "\n")
    return rep.display()


def _run_asymptotics(cfg, out: Path):
    models = cfg.get("models") or [cfg.get("model", "M1")]
    taus = as_levels(cfg["taus"])
    compare = cfg.get("compare", ["BEL.c", "RQ"])
    if len(compare) < 2:
        raise ContractError("compare needs at least two methods: the compared ones then the reference")
    *methods, reference = compare
    header = ["model", "comparison", "coefficient"] + [f"tau={t:g}" for t in taus]
    rows, disp = [], ["\t".join(header)]
    for m in models:
        spec = get_model(m)
        names = ("intercept",) + spec.names
        for meth in methods:
            tab = are_table(spec, taus, meth, reference)
            for j in range(1, spec.p + 1):
                rows.append([spec.label, f"{meth}/{reference}", names[j], *map(_fmt, tab[j])])
                disp.append("\t".join([spec.label, f"{meth}/{reference}", names[j]] + [f"{v:.3f}" for v in tab[j]]))
    _write_rows(out / "table.csv", header, rows)
    (out / "table.txt").write_text("\n".join(disp) + "\n")
    return "\n".join(disp)


_RUNNERS = {"fit": _run_fit, "simulate": _run_simulate, "validate": _run_validate, "asymptotics": _run_asymptotics}


def _error_module(exc: BaseException) -> str:
    module = "belqr.cli"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("belqr"):
            module = name
    return module


def run(config: dict) -> int:
    """Execute one configuration; returns the process exit status."""
    cfg = dict(config)
    out = Path(cfg.get("output_dir", "belqr_out"))
    out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        if cfg.get("command") not in COMMANDS:
            raise ContractError(f"command must be one of {COMMANDS}, got {cfg.get('command')!r}")
        cfg["seed"] = int(cfg.get("seed", 0))
        if not 0 <= cfg["seed"] < 2 ** 64:
            raise ContractError("seed must be a 64-bit unsigned integer")
        (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
        text = _RUNNERS[cfg["command"]](cfg, out)
        status = 0
    except Exception as exc:  # every failure becomes a machine-readable record
        record = {"module": _error_module(exc), "error": type(exc).__name__, "message": str(exc)}
        (out / "error.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        print(f"error [{record['module']}] {record['error']}: {record['message']}", file=sys.stderr)
        text, status = None, 1
    meta = {"started": started, "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "version": __version__, "backend": BACKEND, "exit_status": status}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if text:
        print(text)
    return status


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.replace(" ", "").split(",") if v]


def _names(s: str) -> list[str]:
    return [v for v in s.replace(" ", "").split(",") if v]


def _sampler_args(p):
    p.add_argument("--iters", type=int, help="total MCMC iterations (default 25000)")
    p.add_argument("--burn-in", type=int, help="burn-in iterations (default 5000)")
    p.add_argument("--proposal", choices=["diagonal", "full"])


def _sampler_dict(a):
    d = {}
    if a.iters is not None:
        d["total_iters"] = a.iters
    if a.burn_in is not None:
        d["burn_in"] = a.burn_in
    if a.proposal is not None:
        d["proposal"] = a.proposal
    return d


def _subset(s: str) -> dict:
    try:
        name, column, op, value = s.split(":")
    except ValueError:
        raise argparse.ArgumentTypeError(f"subset must be name:column:op:value, got {s!r}") from None
    return {"name": name, "column": column, "op": op, "value": value if value == "median" else float(value)}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="belqr", description="Bayesian empirical likelihood for quantile regression")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--workers", type=int, help="worker processes for replications (env BELQR_WORKERS)")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="belqr_out", help="output directory")

    p = sub.add_parser("fit", help="fit one method to a CSV file")
    p.add_argument("--data", required=True)
    p.add_argument("--response", default="y")
    p.add_argument("--covariates", type=_names, required=True)
    p.add_argument("--taus", type=_floats, default=[0.5])
    p.add_argument("--method", choices=sorted(METHODS), default="BEL.s")
    p.add_argument("--save-chains", action="store_true")
    _sampler_args(p)
    common(p)

    p = sub.add_parser("simulate", help="coverage or n*MSE experiment")
    p.add_argument("experiment", choices=["coverage", "mse"])
    p.add_argument("--model")
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--taus", type=_floats)
    p.add_argument("--methods", type=_names)
    _sampler_args(p)
    common(p)

    p = sub.add_parser("validate", help="split-sample validation with normalized differences")
    p.add_argument("--data", required=True)
    p.add_argument("--response", default="y")
    p.add_argument("--covariates", type=_names, required=True)
    p.add_argument("--taus", type=_floats, required=True)
    p.add_argument("--methods", type=_names, default=["RQ", "BEL.s"])
    p.add_argument("--splits", type=int, default=3)
    p.add_argument("--subset", type=_subset, action="append", default=[], help="name:column:op:value")
    _sampler_args(p)
    common(p)

    p = sub.add_parser("asymptotics", help="asymptotic relative efficiency table")
    p.add_argument("--model", action="append", help="M1..M4 or CoverageModel; repeatable")
    p.add_argument("--taus", type=_floats, required=True)
    p.add_argument("--compare", nargs="+", default=["BEL.c", "RQ"], help="methods then the reference")
    common(p)

    p = sub.add_parser("run", help="run a JSON configuration file")
    p.add_argument("config")
    p.add_argument("--out", help="override output_dir")
    return ap


def config_from_args(a) -> dict:
    if a.command == "run":
        try:
            cfg = json.loads(Path(a.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ContractError(f"cannot read config {a.config}: {exc}") from None
        if a.out:
            cfg["output_dir"] = a.out
        return cfg
    cfg = {"command": a.command, "seed": a.seed, "output_dir": a.out}
    if a.command in ("fit", "validate"):
        cfg["data"] = {"path": a.data, "response": a.response, "covariates": a.covariates}
        cfg["taus"] = a.taus
    if a.command in ("fit", "simulate", "validate"):
        s = _sampler_dict(a)
        if s:
            cfg["sampler"] = s
    if a.command == "fit":
        cfg["method"] = a.method
        cfg["save_chains"] = a.save_chains
    elif a.command == "validate":
        cfg["methods"] = a.methods
        cfg["n_splits"] = a.splits
        cfg["subsets"] = a.subset
    elif a.command == "simulate":
        cfg["experiment"] = a.experiment
        exp = {k: getattr(a, k) for k in ("model", "n", "reps", "taus", "methods") if getattr(a, k) is not None}
        cfg["experiment_config"] = exp
    elif a.command == "asymptotics":
        cfg["models"] = a.model or ["M1"]
        cfg["taus"] = a.taus
        cfg["compare"] = a.compare
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    a = build_parser().parse_args(argv)
    if a.workers:
        os.environ["BELQR_WORKERS"] = str(a.workers)
    try:
        cfg = config_from_args(a)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

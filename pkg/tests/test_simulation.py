import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from belqr import estimators
from belqr.asymptotics import get_model
from belqr.model import ContractError
from belqr.sampler import SamplerConfig
from belqr.simulation import (
    ExperimentReport, Subset, _mean_se, coverage_experiment, generate, mse_experiment, normalized_difference,
    split_validate, true_params,
)

Z90 = 1.2815515655446004


def test_generate_m1_moments():
    d = generate("M1", 100_000, 0)
    x, z = d.X[:, 1], d.X[:, 2]
    # chi-square(2) has mean 2, variance 4; 2 Bernoulli(0.5) has mean 1, variance 1
    assert abs(x.mean() - 2) < 3 * 2 / math.sqrt(d.n)
    assert abs(z.mean() - 1) < 3 * 1 / math.sqrt(d.n)
    assert set(np.unique(z)) == {0.0, 2.0}


def test_generate_m2_positive_errors():
    d = generate("M2", 2000, 1)
    e = d.y - d.X[:, 1] - d.X[:, 2]
    assert np.all(e > 0)


def test_generate_recipes():
    d = generate("M3", 5000, 2)
    x, z = d.X[:, 1], d.X[:, 2]
    e = (d.y - x - z) / (x / 2 + 1)
    assert stats.kstest(e, stats.norm(0, 2).cdf).pvalue > 1e-3
    c = generate("CoverageModel", 5000, 3)
    assert abs(c.X[:, 1].mean()) < 3 * 2 / math.sqrt(5000)


def test_generate_seeds_and_size():
    a, b = generate("M4", 50, 9), generate("M4", 50, 9)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.X, b.X)
    assert not np.array_equal(a.y, generate("M4", 50, 10).y)
    with pytest.raises(ContractError):
        generate("M1", 9, 0)


def test_true_params_examples():
    tp = true_params("M1", [0.9])
    np.testing.assert_allclose(tp.beta[0, 1:], [1.0, 1.0])
    assert tp.adjusted[0] == pytest.approx(2 + 2 * Z90, abs=1e-12)
    assert tp.adjusted[0] == pytest.approx(4.5631, abs=1e-4)
    m3 = true_params("M3", [0.9])
    assert m3.beta[0, 1] == pytest.approx(1 + Z90, abs=1e-12)
    assert m3.adjusted[0] == pytest.approx(2 + 2 * 2 * Z90, abs=1e-12)


def test_true_params_common_slope():
    taus = [0.25, 0.5, 0.9]
    for m in ("M1", "M2"):
        b = true_params(m, taus).beta
        np.testing.assert_array_equal(b[:, 1:], np.broadcast_to(b[0, 1:], (3, 2)))
    for m in ("M3", "M4"):
        bx = true_params(m, taus).beta[:, 1]
        assert np.all(np.diff(bx) > 0)
        np.testing.assert_array_equal(true_params(m, taus).beta[:, 2], 1.0)


@pytest.mark.parametrize("model", ["M1", "M2", "M3", "M4"])
def test_generator_matches_conditional_quantiles(model):
    n = 100_000
    d = generate(model, n, 11)
    spec = get_model(model)
    for tau in (0.1, 0.5, 0.9):
        q = d.X @ spec.true_beta([tau])[0]
        for mask in (d.X[:, 1] < 1.0, d.X[:, 1] >= 1.0):
            frac = np.mean(d.y[mask] <= q[mask])
            assert abs(frac - tau) < 3 * math.sqrt(tau * (1 - tau) / mask.sum())


def test_normalized_difference_examples():
    assert normalized_difference(79, 0.99, 7889) == pytest.approx((79 - 78.89) / math.sqrt(78.1011), rel=1e-12)
    assert round(normalized_difference(79, 0.99, 7889), 3) == 0.012
    assert normalized_difference(0, 0.5, 100) == -10.0
    assert normalized_difference(25, 0.75, 100) == 0.0
    with pytest.raises(ContractError):
        normalized_difference(101, 0.5, 100)
    with pytest.raises(ContractError):
        normalized_difference(1, 1.0, 100)
    with pytest.raises(ContractError):
        normalized_difference(0, 0.5, 0)


@settings(max_examples=100)
@given(st.integers(100, 10_000), st.sampled_from([0.5, 0.75, 0.9, 0.99]), st.integers(0, 20))
def test_normalized_difference_antisymmetric(n, tau, delta):
    n = n - n % 100
    E = round(n * (1 - tau))
    if E - delta < 0 or E + delta > n:
        return
    assert normalized_difference(E + delta, tau, n) == pytest.approx(-normalized_difference(E - delta, tau, n),
                                                                   abs=1e-9)


@settings(max_examples=50)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30), st.randoms())
def test_aggregates_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    np.testing.assert_allclose(_mean_se(shuffled), _mean_se(values), rtol=1e-9, atol=1e-9)


def test_coverage_single_replication():
    cfg = dict(n=100, reps=1, methods=["BEL.s"], sampler=SamplerConfig(1500, 500).to_dict())
    rep = coverage_experiment(cfg)
    cell = rep.cell("BEL.s", "x_centered", "coverage")
    assert cell["value"] in (0.0, 1.0)
    assert rep.replications == 1
    assert rep.failures == {"BEL.s": 0}


def test_experiment_limits():
    with pytest.raises(ContractError):
        coverage_experiment(dict(methods=["BEL.s"] * 8, reps=1))


def test_mse_experiment_small():
    cfg = dict(model="M1", n=60, reps=3, taus=[0.5], methods=["RQ", "CQR"], seed=4)
    rep = mse_experiment(cfg)
    again = mse_experiment(cfg)
    assert rep.rows == again.rows
    for r in rep.rows:
        assert np.isfinite(r["value"]) and np.isfinite(r["se"])
    # one level: CQR is RQ
    assert rep.value("RQ", "b_x(0.5)", "nMSE") == pytest.approx(rep.value("CQR", "b_x(0.5)", "nMSE"), rel=1e-9)


def oracle_method(data, taus, seed, opts):
    taus = np.asarray(getattr(taus, "taus", taus), dtype=float)
    return estimators.MethodResult("oracle", taus, get_model("M1").true_beta(taus))


def test_split_validate_oracle(monkeypatch):
    monkeypatch.setitem(estimators.METHODS, "oracle", oracle_method)
    data = generate("M1", 20_000, 5)
    rep = split_validate(data, [0.5, 0.9, 0.99], ["oracle"], n_splits=3, seed=1,
                         subsets=[Subset("low x", "x", "<", "median"), Subset("z=0", "z", "==", 0.0)])
    ds = [r["value"] for r in rep.rows if r["statistic"] == "d"]
    assert len(ds) == 3 * 3 * 3
    # 27 correlated N(0,1) cells; 3.5 leaves a wide margin over the family-wise limit
    assert np.max(np.abs(ds)) < 3.5
    assert np.mean(np.abs(ds) < 2) > 0.85
    test_n = data.n - data.n // 2
    O = [r for r in rep.rows if r["statistic"] == "d" and r["subset"] == "all"]
    for r in O:
        tau = float(r["coefficient"][2:-1])
        count = r["value"] * math.sqrt(tau * (1 - tau) * test_n) + test_n * (1 - tau)
        assert count == pytest.approx(round(count), abs=1e-6)


def test_split_validate_reproducible(monkeypatch):
    monkeypatch.setitem(estimators.METHODS, "oracle", oracle_method)
    data = generate("M1", 400, 6)
    a = split_validate(data, [0.5], ["oracle", "RQ"], n_splits=3, seed=2)
    b = split_validate(data, [0.5], ["oracle", "RQ"], n_splits=3, seed=2)
    assert a.rows == b.rows
    splits = [[r["value"] for r in a.rows if r["split"] == s and r["method"] == "oracle"] for s in (1, 2, 3)]
    assert len({tuple(s) for s in splits}) == 3
    c = split_validate(data, [0.5], ["oracle"], n_splits=3, seed=3)
    assert [r["value"] for r in c.rows] != [r["value"] for r in a.rows if r["method"] == "oracle"]


def test_split_validate_bel_t_config():
    data = generate("M1", 200, 7)
    opts = {"BEL.t": {"diff_scales": [[0.02, 0.14], [0.35, 1.16]], "sampler": SamplerConfig(1200, 400).to_dict()}}
    rep = split_validate(data, [0.9, 0.95, 0.99], ["BEL.t"], n_splits=1, seed=0, options=opts)
    assert rep.failures["BEL.t"] == 0
    assert rep.config["options"] == opts
    ess_rows = [r for r in rep.rows if r["statistic"] == "mean_ess"]
    assert len(ess_rows) == 1 and ess_rows[0]["value"] > 0


def test_split_validate_small_n():
    with pytest.raises(ContractError):
        split_validate(generate("M1", 10, 0).subset(np.arange(7)), [0.5], ["RQ"])


def test_subset_errors():
    data = generate("M1", 50, 0)
    with pytest.raises(ContractError):
        Subset("bad", "w", "<", 1.0).mask(data)
    with pytest.raises(ContractError):
        Subset("bad", 1, "~", 1.0).mask(data)
    assert Subset("wet", 2, ">", 0.0).mask(data).sum() == np.sum(data.X[:, 2] > 0)


def test_report_outputs(tmp_path):
    rep = ExperimentReport("mse", 3, 2, [dict(method="RQ", coefficient="b_x(0.5)", statistic="nMSE",
                                               value=1 / 3, se=0.1)], {"RQ": 0}, {"n": 10})
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "method,coefficient,statistic,value,se"
    assert float(lines[1].split(",")[3]) == 1 / 3
    rep.to_json(tmp_path / "r.json")
    s = json.loads((tmp_path / "r.json").read_text())
    assert s["master_seed"] == 3 and s["rows"][0]["value"] == 1 / 3
    assert "0.333" in rep.display()

import math

import numpy as np
import pytest

from belqr.diagnostics import ess
from belqr.el import log_el_ratio
from belqr.model import ContractError, Dataset, Parameterization, ParamVector
from belqr.priors import independent_normal
from belqr.sampler import (
    Chain, SamplerConfig, SamplerError, estimate_information, log_posterior, make_target, metropolis,
    modify_intercepts, point_estimate, run_chain, summarize,
)
from belqr.quantreg import rq_fit, rq_fit_levels
from belqr.simulation import generate


def intercept_data(y):
    y = np.asarray(y, dtype=float)
    return Dataset(y, np.ones((y.size, 1)))


def test_config_validation():
    with pytest.raises(ContractError):
        SamplerConfig(100, 100)
    with pytest.raises(ContractError):
        SamplerConfig(100, 10, target_acceptance=1.0)
    cfg = SamplerConfig(200, 50, proposal="full")
    assert SamplerConfig.from_dict(cfg.to_dict()) == cfg


def test_log_posterior_additive():
    data = intercept_data([1, 2, 3, 4])
    prior = independent_normal([0.0], 1.0)
    z = ParamVector([1.5], Parameterization.full(1, 0))
    expected = math.log(2) + 3 * math.log(2 / 3) + prior.log_density(np.array([1.5]))
    assert log_posterior(data, z, [0.5], prior) == pytest.approx(expected, abs=1e-10)


def test_log_posterior_infeasible():
    data = intercept_data([1, 2, 3, 4])
    z = ParamVector([0.5], Parameterization.full(1, 0))
    assert log_posterior(data, z, [0.5], independent_normal([0.0], 100.0)) == -math.inf


def test_log_posterior_at_sample_quantile():
    data = intercept_data([1, 2, 3, 4])
    prior = independent_normal([0.0], 100.0)
    z = ParamVector([2.5], Parameterization.full(1, 0))
    assert log_posterior(data, z, [0.5], prior) == pytest.approx(prior.log_density(np.array([2.5])), abs=1e-12)


def test_log_posterior_prior_on_reduced_or_full():
    data = generate("M1", 100, 0)
    par = Parameterization.common_slope(2, 2)
    theta = np.array([1.0, 3.0, 1.0, 1.0])
    z = ParamVector(theta, par)
    on_theta = independent_normal(np.zeros(4), 10.0)
    on_full = independent_normal(np.zeros(6), 10.0)
    lr = log_el_ratio(data, z, [0.25, 0.75]).log_ratio
    assert np.isfinite(lr)
    assert log_posterior(data, z, [0.25, 0.75], on_theta) == pytest.approx(lr + on_theta.log_density(theta))
    assert log_posterior(data, z, [0.25, 0.75], on_full) == pytest.approx(lr + on_full.log_density(par.expand(theta)))
    with pytest.raises(ContractError):
        log_posterior(data, z, [0.25, 0.75], independent_normal(np.zeros(5), 1.0))


def test_prior_only_target():
    data = generate("M1", 50, 0)
    prior = independent_normal([0.0], 1.0)
    chain = run_chain(intercept_data(data.y), [0.5], prior, config=SamplerConfig(25000, 5000), seed=4,
                      include_el=False)
    x = chain.samples[:, 0]
    assert chain.size == 20000
    assert abs(x.mean()) < 3 / math.sqrt(ess(x))
    assert x.var() == pytest.approx(1.0, rel=0.10)


def test_determinism_and_seed_dependence():
    data = generate("M1", 150, 1)
    prior = independent_normal([0, 1, 1], 100.0)
    cfg = SamplerConfig(2000, 500)
    a = run_chain(data, [0.5], prior, config=cfg, seed=7)
    b = run_chain(data, [0.5], prior, config=cfg, seed=7)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert a.log_post.tobytes() == b.log_post.tobytes()
    c = run_chain(data, [0.5], prior, config=cfg, seed=8)
    assert not np.array_equal(a.samples, c.samples)


def test_constant_shift_leaves_trajectory():
    data = generate("M1", 120, 2)
    prior = independent_normal([0, 1, 1], 100.0)
    target = make_target(data, [0.5], prior, Parameterization.full(1, 2))
    theta0 = rq_fit(data, 0.5).coef
    frozen = SamplerConfig(3000, 1000, adaptation=False)
    a = metropolis(target, theta0, frozen, seed=3, init_scale=np.full(3, 0.05))
    b = metropolis(lambda t: target(t) + 123.456, theta0, frozen, seed=3, init_scale=np.full(3, 0.05))
    assert 0.05 < a.acceptance_rate < 0.95
    np.testing.assert_array_equal(a.samples, b.samples)
    # with adaptation the shifted differences round differently in the last bits
    cfg = SamplerConfig(3000, 1000)
    a = metropolis(target, theta0, cfg, seed=3, init_scale=np.full(3, 0.05))
    b = metropolis(lambda t: target(t) + 123.456, theta0, cfg, seed=3, init_scale=np.full(3, 0.05))
    np.testing.assert_allclose(a.samples, b.samples, rtol=1e-9, atol=1e-12)


def test_infeasible_proposals_rejected():
    # target is -inf outside the unit box: the chain must never leave it
    def target(t):
        return 0.0 if np.all(np.abs(t) < 1.0) else -math.inf

    chain = metropolis(target, np.zeros(2), SamplerConfig(5000, 1000), seed=0, init_scale=np.full(2, 2.0))
    assert np.all(np.abs(chain.samples) < 1.0)
    assert np.all(np.isfinite(chain.log_post))
    assert 0.0 <= chain.acceptance_rate <= 1.0


def test_bel_chain_feasible_states_only():
    data = generate("M2", 100, 0)
    taus = [0.9, 0.925, 0.95]
    chain = run_chain(data, taus, independent_normal(np.tile([0, 1, 1], 3), 100.0),
                      config=SamplerConfig(3000, 1000), seed=0)
    assert np.all(np.isfinite(chain.log_post))
    target = make_target(data, taus, independent_normal(np.tile([0, 1, 1], 3), 100.0), Parameterization.full(3, 2))
    for s in chain.samples[::200]:
        assert np.isfinite(target(s))


def test_bad_init_reported():
    data = intercept_data([1, 2, 3, 4, 5])
    cfg = SamplerConfig(100, 10, init=np.array([100.0]))
    with pytest.raises(SamplerError):
        run_chain(data, [0.5], independent_normal([0.0], 10.0), config=cfg)


def test_summarize_single_state():
    s = np.array([[1.0, 2.0]])
    chain = Chain(s, np.array([0.0]), 0.0, 0, np.ones(2))
    summ = summarize(chain)
    np.testing.assert_array_equal(summ.mode, s[0])
    np.testing.assert_array_equal(summ.mean, s[0])
    np.testing.assert_array_equal(summ.lower, s[0])
    np.testing.assert_array_equal(summ.upper, s[0])


def test_summarize_gaussian_chain():
    rng = np.random.default_rng(0)
    mu = np.array([1.0, -2.0])
    cov = np.array([[1.0, 0.3], [0.3, 0.5]])
    s = rng.multivariate_normal(mu, cov, size=40000)
    lp = -0.5 * np.einsum("ij,jk,ik->i", s - mu, np.linalg.inv(cov), s - mu)
    summ = summarize(Chain(s, lp, 1.0, 0, np.ones(2)), level=0.9)
    se = np.sqrt(np.diag(cov) / s.shape[0])
    assert np.all(np.abs(summ.mean - mu) < 4 * se)
    np.testing.assert_allclose(summ.lower, mu - 1.6448536 * np.sqrt(np.diag(cov)), atol=0.03)
    assert np.all(lp[np.argmax(lp)] >= lp)
    np.testing.assert_array_equal(summ.mode, s[np.argmax(lp)])


def test_modify_intercepts_examples():
    data = intercept_data([1, 2, 3, 4])
    assert modify_intercepts(data, [0.5], np.zeros((1, 0)))[0] == 2.0
    x = np.linspace(0, 1, 20)
    exact = Dataset.from_covariates(3.0 + 2.0 * x, x)
    assert modify_intercepts(exact, [0.3, 0.8], [[2.0], [2.0]]) == pytest.approx([3.0, 3.0])
    y = np.arange(100.0)
    assert modify_intercepts(intercept_data(y), [0.999], np.zeros((1, 0)))[0] == 99.0
    assert modify_intercepts(intercept_data(y), [0.001], np.zeros((1, 0)))[0] == 0.0


def test_point_estimate_uses_modified_intercepts():
    data = generate("M1", 200, 0)
    prior = independent_normal([0, 1, 1], 100.0)
    chain = run_chain(data, [0.5], prior, config=SamplerConfig(2000, 500), seed=0)
    est = point_estimate(chain, data, [0.5], Parameterization.full(1, 2))
    mode = summarize(chain).mode
    np.testing.assert_array_equal(est[0, 1:], mode[1:])
    assert est[0, 0] == modify_intercepts(data, [0.5], mode[1:])[0]


def test_estimate_information_examples():
    rng = np.random.default_rng(1)
    J_el = np.array([[4.0, 1.0], [1.0, 2.0]])
    J0 = np.array([[1.0, 0.0], [0.0, 0.5]])
    s = rng.multivariate_normal([0, 0], np.linalg.inv(J_el + J0), size=200_000)
    chain = Chain(s, np.zeros(len(s)), 1.0, 0, np.ones(2))
    np.testing.assert_allclose(estimate_information(chain, J0), J_el, rtol=0.02, atol=0.02)
    np.testing.assert_allclose(estimate_information(chain, np.zeros((2, 2))), np.linalg.inv(np.cov(s.T)), rtol=1e-10)
    with pytest.warns(RuntimeWarning):
        out = estimate_information(chain, np.diag([100.0, 0.0]))
    assert np.linalg.eigvalsh(out).min() >= -1e-12
    with pytest.raises(ContractError):
        estimate_information(Chain(np.ones((10, 2)), np.zeros(10), 0.0, 0, np.ones(2)), J0)


def test_chain_csv(tmp_path):
    chain = Chain(np.array([[0.1, 1 / 3]]), np.array([-1.5]), 1.0, 0, np.ones(2), names=("a", "b"))
    path = tmp_path / "chain.csv"
    chain.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b,log_post"
    assert [float(v) for v in lines[1].split(",")] == [0.1, 1 / 3, -1.5]


def test_common_slope_init_averages_rq_slopes():
    data = generate("M1", 300, 0)
    par = Parameterization.common_slope(2, 2)
    rq = rq_fit_levels(data, [0.25, 0.75]).beta
    theta = par.reduce(rq.reshape(-1))
    np.testing.assert_allclose(theta[2:], rq[:, 1:].mean(axis=0))


@pytest.mark.slow
@pytest.mark.xfail(strict=False, reason=(
    "the posterior mean sits 0.1-0.9 posterior sd from the linear center at n=800 (20-40 MCSE): the "
    "EL surface around the RQ fit carries an O(n^-1/4) non-quadratic remainder from the non-smooth score"))
def test_linked_prior_posterior_center():
    from belqr.asymptotics import get_model, information
    from belqr.priors import hessian_at_mode, prior_mode, shrinking_linked_prior

    n, taus = 800, [0.25, 0.75]
    data = generate("M1", n, 0)
    prior = shrinking_linked_prior(n, 2, 2, get_model("M1").true_beta([0.25])[0], sigma_intercept=10.0)
    J0, z0 = hessian_at_mode(prior), prior_mode(prior)
    nI = n * information("M1", taus).info
    zeta_hat = rq_fit_levels(data, taus).beta.reshape(-1)
    center = np.linalg.solve(J0 + nI, J0 @ z0 + nI @ zeta_hat)
    chain = run_chain(data, taus, prior, config=SamplerConfig(40_000, 5_000, proposal="full"), seed=0)
    mcse = chain.samples.std(axis=0) / np.sqrt([ess(c) for c in chain.samples.T])
    assert np.all(np.abs(chain.samples.mean(axis=0) - center) < 4 * mcse)

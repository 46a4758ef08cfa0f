import itertools

import numpy as np
import pytest

from lowsnr import design as D, meanfield as MF, model as M, prior as P, sampler as S

A2 = np.array([[0.0, 0.3], [0.3, 0.0]])
C2 = np.array([0.5, -0.2])


def enumerate_rademacher(A, c):
    states = np.array(list(itertools.product([-1.0, 1.0], repeat=len(c))))
    logw = 0.5 * np.einsum("si,ij,sj->s", states, A, states) + states @ c
    w = np.exp(logw - logw.max())
    w /= w.sum()
    mean = w @ states
    cov = (states - mean).T @ ((states - mean) * w[:, None])
    return mean, cov


def bank(name, p, d=0.0):
    return P.SiteBank.from_prior(P.prior_from_config(name), np.full(p, d))


def test_config_validation():
    with pytest.raises(ValueError):
        S.ChainConfig(n_samples=0)
    with pytest.raises(ValueError):
        S.ChainConfig(thin=0)
    with pytest.raises(ValueError):
        S.ChainConfig(sweep="backwards")


def test_deterministic_given_seed():
    cfg = S.ChainConfig(burn_in=10, n_samples=200, seed=4)
    a = S.run_chain(bank("uniform", 3), np.zeros((3, 3)), np.ones(3), cfg)
    b = S.run_chain(bank("uniform", 3), np.zeros((3, 3)), np.ones(3), cfg)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert np.all(np.abs(a.draws) <= 1) and a.acceptance == 1.0


def test_single_site_matches_tilt():
    b = bank("uniform", 1, 1.0)
    ss = S.run_chain(b, np.zeros((1, 1)), np.array([1.5]), S.ChainConfig(0, 100_000, seed=1))
    est = S.estimate_projection(ss, np.array([1.0]))
    m, v = b.mean_var(np.array([1.5]))
    assert abs(est.mean - m[0]) < 3 * est.mean_se
    assert abs(est.var - v[0]) < 3 * est.var_se


def test_independent_coordinates():
    ss = S.run_chain(bank("three_point", 5), np.zeros((5, 5)), np.zeros(5),
                     S.ChainConfig(0, 20_000, seed=2))
    corr = np.corrcoef(ss.draws.T)
    off = corr[~np.eye(5, dtype=bool)]
    assert np.all(np.abs(off) < 3 / np.sqrt(20_000))


@pytest.mark.parametrize("sweep", ["sequential", "random_scan"])
def test_rademacher_pair_enumeration(sweep):
    mean, cov = enumerate_rademacher(A2, C2)
    ss = S.run_chain(bank("rademacher", 2), A2, C2, S.ChainConfig(100, 100_000, sweep=sweep, seed=3))
    for i in range(2):
        q = np.eye(2)[i]
        est = S.estimate_projection(ss, q)
        assert abs(est.mean - mean[i]) < 3 * est.mean_se
        assert abs(est.rb_mean - mean[i]) < 3 * est.rb_se
        assert abs(est.var - cov[i, i]) < 3 * est.var_se


def test_projection_variance_enumeration():
    mean, cov = enumerate_rademacher(A2, C2)
    q = np.array([0.6, 0.8])
    ss = S.run_chain(bank("rademacher", 2), A2, C2, S.ChainConfig(100, 100_000, seed=5))
    est = S.estimate_projection(ss, q)
    assert abs(est.var - q @ cov @ q) < 3 * est.var_se
    with pytest.raises(ValueError):
        S.estimate_projection(ss, np.ones(2))


def test_symmetric_zero_field_mean():
    ss = S.run_chain(bank("uniform", 4), np.zeros((4, 4)), np.zeros(4), S.ChainConfig(0, 20_000, seed=6))
    est = S.estimate_projection(ss, np.full(4, 0.5))
    assert abs(est.mean) < 3 * est.mean_se


def test_gibbs_sweep_moves_every_site():
    rng = np.random.default_rng(0)
    state = np.zeros(6)
    new = S.gibbs_sweep(state, bank("uniform", 6), np.zeros((6, 6)), np.zeros(6), rng)
    assert np.all(new != 0.0) and np.all(state == 0.0)


def test_init_outside_support_rejected():
    with pytest.raises(ValueError):
        S.run_chain(bank("uniform", 2), np.zeros((2, 2)), np.zeros(2), S.ChainConfig(),
                    init=np.array([2.0, 0.0]))


def test_stationarity_two_inits():
    q = np.ones(40) / np.sqrt(40)
    prior = P.uniform()
    for seed in range(20):
        rng = np.random.default_rng(seed)
        b = D.build_white_noise(400, 40, "gaussian", 1.0, rng)
        truth = M.TruthConfig.from_config({"kind": "iid", "mu_star": "uniform"})
        _, _, c = M.simulate_field(b, truth, rng)
        sb = P.SiteBank.from_prior(prior, b.d)
        u = MF.solve_fixed_point(sb, b.A, c).u
        e1 = S.estimate_projection(S.run_chain(sb, b.A, c, S.ChainConfig(200, 4000, seed=seed), init=u), q)
        e0 = S.estimate_projection(S.run_chain(sb, b.A, c, S.ChainConfig(200, 4000, seed=seed + 99)), q)
        assert abs(e1.rb_mean - e0.rb_mean) < 3 * np.hypot(e1.rb_se, e0.rb_se) + 1e-12


def test_batch_means_iid():
    x = np.random.default_rng(0).standard_normal(40_000)
    se, ess = S.batch_means_se(x)
    assert se == pytest.approx(1 / np.sqrt(40_000), rel=0.2)
    assert ess > 20_000


def test_samples_csv(tmp_path):
    ss = S.run_chain(bank("uniform", 2), np.zeros((2, 2)), np.zeros(2), S.ChainConfig(0, 5))
    ss.to_csv(tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "beta_0,beta_1"

import itertools
import math

import numpy as np
import pytest
from scipy.stats import norm

from lowsnr import asymptotics as AS, design as D, diagnostics as G, model as M, prior as P


def bank(name, p, d=0.0):
    return P.SiteBank.from_prior(P.prior_from_config(name), np.full(p, d))


def random_sym(rng, p, scale):
    G_ = rng.uniform(-1, 1, (p, p))
    A = (G_ + G_.T) / 2 * scale
    np.fill_diagonal(A, 0.0)
    return A


def test_be_terms_zero_coupling():
    q = np.ones(4) / 2
    r = G.berry_esseen_terms(bank("uniform", 4), np.zeros((4, 4)), np.ones(4), q, 0.0)
    assert r.R1 == r.R2 == r.R3 == r.R4 == r.eps_norm == 0.0
    r = G.berry_esseen_terms(bank("uniform", 4), np.zeros((4, 4)), np.ones(4), q, 0.3)
    assert r.eps_norm == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ValueError):
        G.berry_esseen_terms(bank("uniform", 4), np.zeros((4, 4)), np.ones(4), np.ones(4), 0.0)


def test_be_terms_double_loop():
    rng = np.random.default_rng(0)
    p = 15
    A = random_sym(rng, p, 0.2)
    c = rng.normal(0, 1, p)
    q = rng.normal(0, 1, p)
    q /= np.linalg.norm(q)
    b = bank("three_point", p, 0.8)
    r = G.berry_esseen_terms(b, A, c, q, 0.1)
    d1, d2 = b.mean_var(c)
    ups = sum(q[i] ** 2 * d2[i] for i in range(p))
    R1 = sum(sum(A[i, j] * q[j] * (d2[j] - ups) for j in range(p)) ** 2 for i in range(p))
    t = [sum(A[i, j] * d1[j] for j in range(p)) for i in range(p)]
    R4 = abs(sum(A[i, j] * q[i] * (d2[i] - ups) * d1[j] for i in range(p) for j in range(p)))
    assert r.R1 == pytest.approx(R1, abs=1e-10)
    assert r.R2 == pytest.approx(sum(x * x for x in t), abs=1e-10)
    assert r.R3 == pytest.approx(sum(x**4 for x in t), abs=1e-10)
    assert r.R4 == pytest.approx(R4, abs=1e-10)
    assert r.upsilon_p == pytest.approx(ups, abs=1e-14)
    assert r.R3 <= r.R2**2
    assert min(r.R1, r.R2, r.R3, r.R4, r.eps_norm, r.bound_rhs) >= 0


def test_ks_self_and_degenerate():
    rng = np.random.default_rng(1)
    assert G.ks_distance(rng.normal(2.0, 3.0, 100_000), (2.0, 9.0)) < 0.01
    assert G.ks_distance(np.full(500, 0.7), (0.7, 1.0)) == pytest.approx(0.5, abs=1e-12)
    shifted = G.ks_distance(rng.normal(1.0, 1.0, 100_000), (0.0, 1.0))
    assert shifted == pytest.approx(norm.cdf(0.5) - norm.cdf(-0.5), abs=0.01)
    with pytest.raises(ValueError):
        G.ks_distance(np.zeros(50), (0.0, 1.0))
    with pytest.raises(ValueError):
        G.ks_distance(np.zeros(200), (0.0, 0.0))


def test_ks_matches_scipy():
    from scipy.stats import kstest
    x = np.random.default_rng(2).standard_normal(1000)
    assert G.ks_distance(x, (0.0, 1.0)) == pytest.approx(kstest(x, "norm").statistic, abs=1e-12)


def test_oracle_zero_coupling():
    c = np.array([0.3, -1.0, 0.8])
    b = bank("uniform", 3, 1.0)
    o = G.small_p_oracle(b, np.zeros((3, 3)), c)
    assert o.kl_qprod == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(o.mean, b.mean(c), atol=1e-13)
    np.testing.assert_allclose(np.diag(o.cov), b.var(c), atol=1e-13)
    assert o.log_z == pytest.approx(b.log_mgf(c).sum(), abs=1e-12)


def test_oracle_enumeration():
    A = np.array([[0.0, 0.3], [0.3, 0.0]])
    c = np.array([0.5, -0.2])
    states = np.array(list(itertools.product([-1.0, 1.0], repeat=2)))
    logw = 0.5 * np.einsum("si,ij,sj->s", states, A, states) + states @ c
    w = np.exp(logw) / np.exp(logw).sum()
    o = G.small_p_oracle(bank("rademacher", 2), A, c)
    np.testing.assert_allclose(o.mean, w @ states, atol=1e-14)
    # both rademacher bases put mass 1/2 on each sign
    assert o.normalizing_const == pytest.approx(np.exp(logw).sum() / 4, rel=1e-13)


def test_oracle_kl_vanishes():
    rng = np.random.default_rng(3)
    A = random_sym(rng, 3, 0.5)
    c = rng.normal(0, 1, 3)
    kls = [G.small_p_oracle(bank("uniform", 3, 1.0), s * A, c).kl_qprod for s in (0.4, 0.2, 0.1, 0.0)]
    assert all(k >= 0 for k in kls)
    assert kls[0] > kls[1] > kls[2] > kls[3]
    assert kls[3] < 1e-12


def test_oracle_rejects_large_p():
    with pytest.raises(ValueError):
        G.small_p_oracle(bank("rademacher", 4), np.zeros((4, 4)), np.zeros(4))


def test_mf_gap_quadratic_in_coupling():
    rng = np.random.default_rng(4)
    for _ in range(5):
        A = random_sym(rng, 3, 1.0)
        c = rng.normal(0, 1, 3)
        gaps = {}
        for a in (0.1, 0.2, 0.4):
            o = G.small_p_oracle(bank("three_point", 3, 0.5), a * A, c)
            gaps[a] = np.max(np.abs(o.mean - o.mf_mean))
        assert gaps[0.1] <= 3 * gaps[0.4] * (0.1 / 0.4) ** 2
        assert gaps[0.2] <= 3 * gaps[0.4] * (0.2 / 0.4) ** 2


def test_wilson_interval():
    lo, hi = G.wilson_interval(95, 100)
    assert lo == pytest.approx(0.88825, abs=1e-4) and hi == pytest.approx(0.97846, abs=1e-4)
    lo, hi = G.wilson_interval(0, 20)
    assert lo == 0.0 and 0 < hi < 0.2


def _anova_spec(alpha=0.05, p=300):
    b = D.build_anova(p, 1.0)
    q1, _ = D.anova_eigvecs(p)
    k = AS.constants("uniform", "uniform", b.d0, -0.5, alpha)
    truth = M.TruthConfig.from_config({"kind": "iid", "mu_star": "uniform"})
    return G.CoverageSpec(b, P.uniform(), truth, q1, alpha,
                          theory={"exact": k.coverage_limit, "nmf": k.nmf_coverage_limit})


def test_coverage_thread_independent():
    spec = _anova_spec(p=40)
    a = G.coverage_mc(spec, 60, seed=5, threads=1)
    b = G.coverage_mc(spec, 60, seed=5, threads=3)
    assert a == b
    r = a["exact"]
    assert r.wilson_lo <= r.estimate <= r.wilson_hi
    assert spec.lam == pytest.approx(-0.5, abs=1e-12)


def test_coverage_half_level():
    r = G.coverage_mc(_anova_spec(alpha=0.5), 1000, seed=6)["exact"]
    assert r.theory == pytest.approx(0.5, abs=1e-10)
    assert r.wilson_lo <= 0.5 <= r.wilson_hi


def test_assumption_checks():
    ident = D.diagnostics(D.build_gaussian_sequence(10, 1.0))
    assert all(c.status == "pass" for c in G.assumption_checks(ident, 10))
    assert ident.alpha_p == 0
    hot = D.diagnostics(D.build_anova(20, 0.4))
    checks = {c.name: c for c in G.assumption_checks(hot, 20)}
    assert checks["high_temperature"].status == "fail"
    assert hot.norm2 == pytest.approx(1.25, abs=1e-8)
    wn = D.build_white_noise(1000, 50, "gaussian", 1.0, np.random.default_rng(0))
    checks = G.assumption_checks(D.diagnostics(wn), 50)
    assert all(c.status == "pass" for c in checks)
